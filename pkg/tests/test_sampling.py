import pytest

import numpy as np

from scipy import stats as scipy_stats

from alpha_mixture.expfam import GaussianParams

from alpha_mixture.harness.trial import vr_bound_on_batch

from alpha_mixture.mixture import Diagnostics, Family, MixtureState, SamplerKind

from alpha_mixture.quadrature import GridKind, build_grid

from alpha_mixture.sampling import (
    SampleBatch,
    draw_samples,
    effective_sample_size,
    estimate_stats,
    quadrature_stats,
    rng_stream,
)

from alpha_mixture.student import StudentTParams

from alpha_mixture.targets import builtin_target


@pytest.fixture
def state() -> MixtureState:
    return MixtureState(
        np.array([0.3, 0.7]),
        (GaussianParams([-1.0], [[1.0]]), GaussianParams([2.0], [[1.5]])),
        Family.GAUSSIAN_FULL,
    )


class TestRngStream:
    def test_deterministic(self) -> None:
        a = rng_stream(7, 3, 11).standard_normal(64)
        b = rng_stream(7, 3, 11).standard_normal(64)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize(
        "other",
        [
            # Trial
            (7, 4, 11),
            # Iteration
            (7, 3, 12),
            # Master seed
            (8, 3, 11),
        ],
    )
    def test_distinct(self, other: tuple[int, int, int]) -> None:
        a = rng_stream(7, 3, 11).standard_normal(64)
        b = rng_stream(*other).standard_normal(64)
        assert not np.any(a == b)

    def test_negative(self) -> None:
        with pytest.raises(ValueError):
            rng_stream(0, -1, 0)


class TestDrawSamples:
    @pytest.mark.parametrize("kind", list(SamplerKind))
    def test_batch(self, kind: SamplerKind, state: MixtureState) -> None:
        batch = draw_samples(state, kind, 50, rng_stream(0, 0, 1))
        assert batch.points.shape == (50, 1)
        assert batch.num_samples == 50
        assert batch.sampler == kind
        assert set(batch.component_indices) <= {0, 1}
        assert np.all(np.isfinite(batch.log_q))

    def test_same_stream_same_batch(self, state: MixtureState) -> None:
        a = draw_samples(state, SamplerKind.IS_N, 20, rng_stream(1, 2, 3))
        b = draw_samples(state, SamplerKind.IS_N, 20, rng_stream(1, 2, 3))
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.component_indices, b.component_indices)

    def test_log_q(self, state: MixtureState) -> None:
        rng = rng_stream(0, 0, 1)
        batch = draw_samples(state, SamplerKind.IS_N, 20, rng)
        assert np.allclose(batch.log_q, state.log_density(batch.points), atol=1e-12)

        batch = draw_samples(state, SamplerKind.IS_UNIF, 20, rng)
        uniform = state.with_weights([0.5, 0.5])
        assert np.allclose(batch.log_q, uniform.log_density(batch.points), atol=1e-12)

    def test_degenerate_weights(self) -> None:
        state = MixtureState(
            np.array([1 - 1e-15, 1e-15]),
            (GaussianParams([0.0], [[1.0]]), GaussianParams([5.0], [[1.0]])),
            Family.GAUSSIAN_FULL,
        )
        batch = draw_samples(state, SamplerKind.IS_N, 1000, rng_stream(0, 0, 1))
        assert np.all(batch.component_indices == 0)

    def test_uniform_indices(self) -> None:
        state = MixtureState(
            np.array([0.7, 0.1, 0.1, 0.1]),
            tuple(GaussianParams([float(m)], [[1.0]]) for m in range(4)),
            Family.GAUSSIAN_FULL,
        )
        batch = draw_samples(state, SamplerKind.IS_UNIF, 10000, rng_stream(0, 0, 1))
        counts = np.bincount(batch.component_indices, minlength=4)
        assert scipy_stats.chisquare(counts).pvalue > 1e-4

    def test_component_distribution(self, state: MixtureState) -> None:
        batch = draw_samples(state, SamplerKind.IS_N, 20000, rng_stream(0, 0, 1))
        selected = batch.points[batch.component_indices == 1, 0]
        result = scipy_stats.kstest(selected, scipy_stats.norm(2.0, np.sqrt(1.5)).cdf)
        assert result.pvalue > 1e-3

    def test_student(self) -> None:
        state = MixtureState.uniform(
            [
                StudentTParams([0.0, 0.0], np.eye(2), 3.0),
                StudentTParams([4.0, 0.0], np.eye(2), 8.0),
            ],
            Family.STUDENT_T,
        )
        batch = draw_samples(state, SamplerKind.IS_N, 100, rng_stream(0, 0, 1))
        assert batch.points.shape == (100, 2)
        assert np.allclose(batch.log_q, state.log_density(batch.points), atol=1e-12)

    def test_no_samples(self, state: MixtureState) -> None:
        with pytest.raises(ValueError):
            draw_samples(state, SamplerKind.IS_N, 0, rng_stream(0, 0, 1))


def test_effective_sample_size() -> None:
    assert effective_sample_size(np.zeros(10)) == pytest.approx(10.0)
    assert effective_sample_size(np.array([0.0, -np.inf, -np.inf])) == pytest.approx(1.0)
    assert effective_sample_size(np.full(3, -np.inf)) == 0.0
    rows = effective_sample_size(np.array([[0.0, 0.0], [0.0, -np.inf]]))
    assert rows == pytest.approx([2.0, 1.0])


class TestEstimateStats:
    def test_single_sample(self, state: MixtureState) -> None:
        target = builtin_target("ewgmm", 1)
        alpha = 0.3
        batch = draw_samples(state, SamplerKind.IS_N, 1, rng_stream(0, 0, 1))
        stats = estimate_stats(batch, state, target, alpha)
        y = batch.points
        log_mu = state.log_density(y)[0]
        for j, component in enumerate(state.components):
            log_phi = component.log_density(y)[0] + (alpha - 1) * (log_mu - target.log_p(y)[0])
            assert stats.log_mass[j] == pytest.approx(log_phi - batch.log_q[0], abs=1e-12)
            assert stats.means[j] == pytest.approx(y[0])
            assert stats.covariances[j] == pytest.approx(np.zeros((1, 1)), abs=1e-12)
            assert stats.ess[j] == pytest.approx(1.0)

    def test_normalised_weights(self, state: MixtureState) -> None:
        batch = draw_samples(state, SamplerKind.IS_N, 30, rng_stream(0, 0, 1))
        stats = estimate_stats(batch, state, builtin_target("ewgmm", 1), 0.2)
        assert np.exp(stats.log_weights).sum(axis=1) == pytest.approx([1.0, 1.0])
        assert np.all((stats.ess > 1 - 1e-9) & (stats.ess < 30 + 1e-9))
        moments = stats.moment_estimate(1)
        assert moments is not None
        assert moments.mass == pytest.approx(stats.mass[1])

    def test_invariant_to_target_scale(self, state: MixtureState) -> None:
        alpha = 0.2
        batch = draw_samples(state, SamplerKind.IS_N, 30, rng_stream(0, 0, 1))
        small = estimate_stats(batch, state, builtin_target("imbalanced_gmm", 1, c=2.0), alpha)
        large = estimate_stats(batch, state, builtin_target("imbalanced_gmm", 1, c=5.0), alpha)
        assert np.allclose(small.means, large.means, atol=1e-12)
        assert np.allclose(small.covariances, large.covariances, atol=1e-12)
        assert np.allclose(
            large.log_mass - small.log_mass, (1 - alpha) * np.log(2.5), atol=1e-12
        )

    def test_precomputed_log_p(self, state: MixtureState) -> None:
        target = builtin_target("ewgmm", 1)
        batch = draw_samples(state, SamplerKind.IS_N, 30, rng_stream(0, 0, 1))
        a = estimate_stats(batch, state, target, 0.5)
        b = estimate_stats(batch, state, target, 0.5, log_p=target.log_p(batch.points))
        assert np.array_equal(a.log_mass, b.log_mass)

    def test_underflow(self) -> None:
        state = MixtureState.uniform(
            [GaussianParams([0.0], [[1.0]]), GaussianParams([1000.0], [[1.0]])],
            Family.GAUSSIAN_FULL,
        )
        points = np.linspace(-1, 1, 5)[:, None]
        batch = SampleBatch(
            points,
            state.log_density(points),
            np.zeros(5, dtype=np.int64),
            SamplerKind.IS_N,
        )
        diagnostics = Diagnostics()
        stats = estimate_stats(
            batch, state, builtin_target("ewgmm", 1), 0.2, diagnostics=diagnostics
        )
        assert list(stats.available) == [True, False]
        assert stats.num_unavailable == 1
        assert stats.moment_estimate(1) is None
        assert np.all(np.isnan(stats.means[1]))
        assert stats.ess[1] == 0.0
        assert diagnostics.unavailable_components == 1

    def test_excluded_points(self, state: MixtureState) -> None:
        points = np.array([[0.0], [1.0], [2.0]])
        batch = SampleBatch(
            points, state.log_density(points), np.zeros(3, dtype=np.int64), SamplerKind.IS_N
        )
        diagnostics = Diagnostics()
        stats = estimate_stats(
            batch,
            state,
            builtin_target("ewgmm", 1),
            0.2,
            log_p=np.array([0.0, -np.inf, 0.0]),
            diagnostics=diagnostics,
        )
        assert diagnostics.excluded_points == 1
        assert np.all(stats.log_weights[:, 1] == -np.inf)

    @pytest.mark.parametrize("kind", list(SamplerKind))
    def test_unbiased(self, kind: SamplerKind, state: MixtureState) -> None:
        # The mean of the mass estimates over many batches matches the
        # quadrature integral within a few standard errors
        alpha = 0.5
        target = builtin_target("imbalanced_gmm", 1)
        grid = build_grid(GridKind.GAUSS_HERMITE, 1, 128, scale=2.0)
        truth = quadrature_stats(grid, state, target, alpha).mass

        rng = rng_stream(0, 0, 1)
        num_batches = 10000
        estimates = np.empty((num_batches, 2))
        for i in range(num_batches):
            batch = draw_samples(state, kind, 10, rng)
            estimates[i] = estimate_stats(batch, state, target, alpha).mass

        mean = estimates.mean(axis=0)
        standard_error = estimates.std(axis=0, ddof=1) / np.sqrt(num_batches)
        assert np.all(np.abs(mean - truth) < 4 * standard_error)


class TestQuadratureStats:
    def test_masses_sum(self, state: MixtureState) -> None:
        # sum_j lambda_j I_j = int (mu k)^alpha p^(1 - alpha)
        alpha = 0.4
        target = builtin_target("ewgmm", 1)
        grid = build_grid(GridKind.GAUSS_HERMITE, 1, 128, scale=2.0)
        stats = quadrature_stats(grid, state, target, alpha)
        log_integrand = alpha * state.log_density(grid.nodes) + (1 - alpha) * target.log_p(
            grid.nodes
        )
        assert float(state.weights @ stats.mass) == pytest.approx(
            np.exp(grid.log_integrate(log_integrand)), rel=1e-12
        )

    def test_moments_of_target(self) -> None:
        # alpha = 0 with a single component: the normalised responsibility is
        # the normalised target
        state = MixtureState.uniform([GaussianParams([0.0], [[1.0]])], Family.GAUSSIAN_FULL)
        target = builtin_target("imbalanced_gmm", 1)
        grid = build_grid(GridKind.GAUSS_HERMITE, 1, 128, scale=2.0)
        stats = quadrature_stats(grid, state, target, 0.0)
        assert stats.mass[0] == pytest.approx(2.0, rel=1e-10)
        assert stats.means[0, 0] == pytest.approx(0.2, abs=1e-10)


def test_vr_bound_of_exact_proposal() -> None:
    # Sampling from q = p / 2 gives the exact bound log 2 for any batch
    target = builtin_target("ewgmm", 1)
    state = MixtureState.uniform(
        [GaussianParams([-2.0], [[1.0]]), GaussianParams([2.0], [[1.0]])], Family.GAUSSIAN_FULL
    )
    batch = draw_samples(state, SamplerKind.IS_N, 200, rng_stream(0, 0, 1))
    log_p = target.log_p(batch.points)
    assert vr_bound_on_batch(0.2, batch.log_q, log_p, batch.log_q) == pytest.approx(
        np.log(2.0), abs=1e-12
    )
