import pytest

from dataclasses import replace

import numpy as np

from alpha_mixture.components import (
    MAX_HALVINGS,
    mg_update,
    rgd_update_means,
    student_mixture_update,
    student_update,
)

from alpha_mixture.expfam import GaussianParams, MomentEstimate, ParameterDomainError

from alpha_mixture.harness.config import (
    ExperimentConfig,
    IntegralMode,
    QuadratureConfig,
    TargetSpec,
    UpdateRule,
)

from alpha_mixture.harness.trial import run_trial

from alpha_mixture.mixture import (
    Diagnostics,
    Family,
    MixtureInvariantError,
    MixtureState,
    ScheduleConfig,
)

from alpha_mixture.quadrature import GridKind, QuadratureGrid, build_grid

from alpha_mixture.sampling import quadrature_stats

from alpha_mixture.student import StudentTParams

from alpha_mixture.targets import Target, builtin_target


def gaussian_target(mean: float, variance: float, c: float = 1.0) -> Target:
    def log_p(points: np.ndarray) -> np.ndarray:
        return (
            np.log(c)
            - 0.5 * (points[:, 0] - mean) ** 2 / variance
            - 0.5 * np.log(2 * np.pi * variance)
        )

    return Target(log_p=log_p, dimension=1, label="normal", normaliser=c)


def gaussian_state(
    means: list[float], variances: list[float], weights: list[float], family: Family
) -> MixtureState:
    return MixtureState(
        np.array(weights),
        tuple(GaussianParams([m], [[v]]) for m, v in zip(means, variances)),
        family,
    )


@pytest.fixture
def grid() -> QuadratureGrid:
    return build_grid(GridKind.GAUSS_HERMITE, 1, 128, scale=2.0)


def quadrature_config(
    alpha: float,
    eta: float,
    gamma: float,
    num_iterations: int,
    family: Family,
    rule: UpdateRule,
    quadrature: QuadratureConfig,
    kind: str = "ewgmm",
) -> ExperimentConfig:
    return ExperimentConfig(
        target=TargetSpec(kind=kind, dimension=1, c=2.0),
        schedule=ScheduleConfig(
            alpha=alpha, num_samples=1, num_iterations=num_iterations, eta=eta, gamma=gamma
        ),
        family=family,
        rule=rule,
        trials=1,
        integrals=IntegralMode.QUADRATURE,
        quadrature=quadrature,
    )


GAUSS_HERMITE = QuadratureConfig(
    kind=GridKind.GAUSS_HERMITE, order=128, scale=2.0, normalisation_tol=1e-5
)


class TestMGUpdate:
    def test_moment_matching(self, grid: QuadratureGrid) -> None:
        # With alpha = 0 the normalised responsibility of a single component
        # is the normalised target
        target = gaussian_target(3.0, 2.0, c=2.0)
        state = gaussian_state([0.0], [1.0], [1.0], Family.GAUSSIAN_FULL)
        stats = quadrature_stats(grid, state, target, 0.0)
        (updated,) = mg_update(state, [stats.moment_estimate(0)], 1.0)
        assert updated.mean[0] == pytest.approx(3.0, abs=1e-8)
        assert updated.covariance[0, 0] == pytest.approx(2.0, abs=1e-8)

    def test_unavailable_component(self) -> None:
        state = gaussian_state([0.0, 1.0], [1.0, 1.0], [0.5, 0.5], Family.GAUSSIAN_FULL)
        moments = [MomentEstimate(1.0, [2.0], [[1.0]]), None]
        updated = mg_update(state, moments, 0.5)
        assert updated[0].mean[0] == pytest.approx(1.0)
        assert updated[1] is state.components[1]

    def test_families(self) -> None:
        moments = [MomentEstimate(1.0, [2.0, -1.0], [[3.0, 0.5], [0.5, 2.0]])]
        initial = [GaussianParams([0.0, 0.0], np.eye(2))]
        full = mg_update(MixtureState.uniform(initial, Family.GAUSSIAN_FULL), moments, 0.5)[0]
        diagonal = mg_update(
            MixtureState.uniform(initial, Family.GAUSSIAN_DIAGONAL), moments, 0.5
        )[0]
        fixed = mg_update(
            MixtureState.uniform(initial, Family.GAUSSIAN_FIXED_SIGMA2), moments, 0.5
        )[0]

        assert np.allclose(full.mean, [1.0, -0.5])
        assert np.allclose(diagonal.mean, full.mean)
        assert np.allclose(fixed.mean, full.mean)

        assert np.allclose(np.diag(diagonal.covariance), np.diag(full.covariance))
        assert diagonal.covariance[0, 1] == 0.0
        assert np.array_equal(fixed.covariance, np.eye(2))

    def test_halving(self) -> None:
        state = gaussian_state([0.0], [1.0], [1.0], Family.GAUSSIAN_FULL)
        diagnostics = Diagnostics()
        # gamma * -5 + (1 - gamma) first turns positive at gamma = 1/8
        (updated,) = mg_update(state, [MomentEstimate(1.0, [0.0], [[-5.0]])], 1.0, diagnostics)
        assert updated.covariance[0, 0] == pytest.approx(0.25)
        assert diagnostics.gamma_halvings == 3
        assert diagnostics.frozen_components == 0

    def test_frozen(self) -> None:
        state = gaussian_state([0.0], [1.0], [1.0], Family.GAUSSIAN_FULL)
        diagnostics = Diagnostics()
        (updated,) = mg_update(state, [MomentEstimate(1.0, [0.0], [[-1e10]])], 1.0, diagnostics)
        assert updated is state.components[0]
        assert diagnostics.gamma_halvings == MAX_HALVINGS
        assert diagnostics.frozen_components == 1

    def test_errors(self) -> None:
        state = gaussian_state([0.0, 1.0], [1.0, 1.0], [0.5, 0.5], Family.GAUSSIAN_FULL)
        moments = [MomentEstimate(1.0, [0.0], [[1.0]])] * 2
        with pytest.raises(MixtureInvariantError):
            mg_update(state, moments[:1], 0.5)
        with pytest.raises(MixtureInvariantError):
            mg_update(state, moments, [0.5])
        with pytest.raises(ParameterDomainError):
            mg_update(state, moments, 0.0)
        student = MixtureState.uniform([StudentTParams([0.0], [[1.0]], 3.0)], Family.STUDENT_T)
        with pytest.raises(MixtureInvariantError):
            mg_update(student, moments[:1], 0.5)


class TestRGDUpdateMeans:
    def test_example(self) -> None:
        state = gaussian_state([0.0, 0.0], [1.0, 1.0], [0.5, 0.5], Family.GAUSSIAN_FIXED_SIGMA2)
        moments = [
            MomentEstimate(1.0, [1.0], [[1.0]]),
            MomentEstimate(3.0, [2.0], [[1.0]]),
        ]
        means = rgd_update_means(state, moments, 1.0, 0.5)
        assert means[:, 0] == pytest.approx([0.25, 1.5])

    def test_single_component(self) -> None:
        state = gaussian_state([1.0], [1.0], [1.0], Family.GAUSSIAN_FIXED_SIGMA2)
        means = rgd_update_means(state, [MomentEstimate(0.3, [5.0], [[1.0]])], 0.25, 0.2)
        assert means[0, 0] == pytest.approx(0.75 * 1.0 + 0.25 * 5.0)

    def test_gamma_zero(self) -> None:
        state = gaussian_state([1.0, -1.0], [1.0, 1.0], [0.5, 0.5], Family.GAUSSIAN_FIXED_SIGMA2)
        moments = [MomentEstimate(1.0, [5.0], [[1.0]])] * 2
        assert np.array_equal(rgd_update_means(state, moments, 0.0, 0.2), state.means)

    def test_vanishing_masses(self) -> None:
        state = gaussian_state([1.0, -1.0], [1.0, 1.0], [0.5, 0.5], Family.GAUSSIAN_FIXED_SIGMA2)
        diagnostics = Diagnostics()
        means = rgd_update_means(state, [None, None], 0.5, 0.2, diagnostics)
        assert np.array_equal(means, state.means)
        assert diagnostics.skipped_mean_updates == 1

    def test_alpha_one(self) -> None:
        state = gaussian_state([1.0], [1.0], [1.0], Family.GAUSSIAN_FIXED_SIGMA2)
        with pytest.raises(ParameterDomainError):
            rgd_update_means(state, [MomentEstimate(1.0, [0.0], [[1.0]])], 0.5, 1.0)

    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0])
    def test_matches_mg_means(self, gamma: float, grid: QuadratureGrid) -> None:
        state = gaussian_state(
            [-3.0, 0.5, 2.5], [1.0, 1.0, 1.0], [0.2, 0.5, 0.3], Family.GAUSSIAN_FIXED_SIGMA2
        )
        stats = quadrature_stats(grid, state, builtin_target("ewgmm", 1), 0.2)
        moments = [stats.moment_estimate(j) for j in range(3)]
        rgd = rgd_update_means(state, moments, gamma, 0.2)

        shares = state.weights * stats.mass
        mg_gammas = gamma * shares / np.sum(shares)
        mg = mg_update(state, moments, list(mg_gammas))
        assert np.allclose(np.stack([c.mean for c in mg]), rgd, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("alpha", [0.2, 0.5, 0.8])
    def test_renyi_gradient_step(self, alpha: float, grid: QuadratureGrid) -> None:
        # The update is a gradient step on the Renyi divergence
        # log(int (mu k)^alpha p^(1 - alpha)) / (alpha (alpha - 1)) with
        # learning rate sigma^2 (1 - alpha) gamma
        sigma2, gamma = 1.0, 0.5
        target = builtin_target("imbalanced_gmm", 1)
        state = gaussian_state(
            [-3.0, 0.5, 2.5], [sigma2] * 3, [0.2, 0.5, 0.3], Family.GAUSSIAN_FIXED_SIGMA2
        )
        log_p = target.log_p(grid.nodes)

        def renyi(means: np.ndarray) -> float:
            moved = state.with_means(means)
            log_integral = grid.log_integrate(
                alpha * moved.log_density(grid.nodes) + (1 - alpha) * log_p
            )
            return log_integral / (alpha * (alpha - 1))

        h = 1e-5
        gradient = np.zeros((3, 1))
        for j in range(3):
            step = np.zeros((3, 1))
            step[j, 0] = h
            gradient[j, 0] = (renyi(state.means + step) - renyi(state.means - step)) / (2 * h)

        stats = quadrature_stats(grid, state, target, alpha)
        moments = [stats.moment_estimate(j) for j in range(3)]
        means = rgd_update_means(state, moments, gamma, alpha)
        expected = state.means - sigma2 * (1 - alpha) * gamma * gradient
        assert np.allclose(means, expected, rtol=1e-4, atol=1e-8)


class TestStudentUpdate:
    @pytest.fixture
    def uniform_grid(self) -> QuadratureGrid:
        return build_grid(GridKind.UNIFORM, 1, 8000, lower=-200.0, upper=200.0)

    def test_fixed_point(self, uniform_grid: QuadratureGrid) -> None:
        params = StudentTParams([1.0], [[2.0]], 5.0)
        target = Target(log_p=params.log_density, dimension=1, label="student", normaliser=1.0)
        state = MixtureState.uniform([params], Family.STUDENT_T)
        stats = quadrature_stats(uniform_grid, state, target, 0.0)
        updated = student_update(params, stats.points, stats.log_weights[0], 1.0)
        assert updated.mean[0] == pytest.approx(1.0, abs=1e-6)
        assert updated.scale[0, 0] == pytest.approx(2.0, abs=1e-6)
        assert updated.dof == pytest.approx(5.0, abs=1e-6)

    def test_small_gamma(self) -> None:
        params = StudentTParams([1.0, -1.0], [[2.0, 0.3], [0.3, 1.0]], 4.0)
        rng = np.random.default_rng(0)
        points = rng.normal(size=(50, 2)) * 3
        log_weights = np.full(50, -np.log(50))
        updated = student_update(params, points, log_weights, 1e-12)
        assert np.allclose(updated.mean, params.mean, atol=1e-10)
        assert np.allclose(updated.scale, params.scale, atol=1e-10)
        assert updated.dof == pytest.approx(4.0, rel=1e-8)

    def test_gamma_domain(self) -> None:
        params = StudentTParams([0.0], [[1.0]], 3.0)
        with pytest.raises(ParameterDomainError):
            student_update(params, np.zeros((1, 1)), np.zeros(1), 0.0)

    def test_mixture_update_skips_unavailable(self, uniform_grid: QuadratureGrid) -> None:
        target = builtin_target("ewsmm", 1)
        state = MixtureState.uniform(
            [StudentTParams([-2.0], [[1.0]], 3.0), StudentTParams([2.0], [[1.0]], 3.0)],
            Family.STUDENT_T,
        )
        stats = quadrature_stats(uniform_grid, state, target, 0.2)
        stats = replace(stats, available=np.array([True, False]))
        updated = student_mixture_update(state, stats, 0.5)
        assert updated[0] is not state.components[0]
        assert updated[1] is state.components[1]

    def test_requires_student_mixture(self, grid: QuadratureGrid) -> None:
        state = gaussian_state([0.0], [1.0], [1.0], Family.GAUSSIAN_FULL)
        stats = quadrature_stats(grid, state, builtin_target("ewgmm", 1), 0.2)
        with pytest.raises(MixtureInvariantError):
            student_mixture_update(state, stats, 0.5)


class TestMonotonicity:
    @pytest.mark.parametrize("kind", ["ewgmm", "imbalanced_gmm"])
    @pytest.mark.parametrize("alpha", [0.0, 0.2, 0.5])
    @pytest.mark.parametrize("eta", [0.0, 0.5, 1.0])
    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0])
    @pytest.mark.parametrize("num_components", [1, 3])
    def test_mg(
        self, kind: str, alpha: float, eta: float, gamma: float, num_components: int
    ) -> None:
        if num_components == 1:
            initial = gaussian_state([0.5], [2.0], [1.0], Family.GAUSSIAN_FULL)
        else:
            initial = gaussian_state(
                [-3.0, 0.5, 2.5], [1.0, 2.0, 0.5], [0.2, 0.5, 0.3], Family.GAUSSIAN_FULL
            )
        config = quadrature_config(
            alpha, eta, gamma, 50, Family.GAUSSIAN_FULL, UpdateRule.MG, GAUSS_HERMITE, kind
        )
        psi = run_trial(config, 0, initial=initial).trace.psi_values
        assert psi is not None
        assert np.all(np.diff(psi) <= 1e-8)

    @pytest.mark.parametrize("kind", ["ewgmm", "imbalanced_gmm"])
    @pytest.mark.parametrize("alpha", [0.0, 0.2, 0.5])
    @pytest.mark.parametrize("eta", [0.0, 0.5, 1.0])
    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0])
    @pytest.mark.parametrize("num_components", [1, 3])
    def test_rgd(
        self, kind: str, alpha: float, eta: float, gamma: float, num_components: int
    ) -> None:
        means = [0.5] if num_components == 1 else [-3.0, 0.5, 2.5]
        weights = [1.0] if num_components == 1 else [0.2, 0.5, 0.3]
        initial = gaussian_state(
            means, [1.0] * num_components, weights, Family.GAUSSIAN_FIXED_SIGMA2
        )
        config = quadrature_config(
            alpha,
            eta,
            gamma,
            50,
            Family.GAUSSIAN_FIXED_SIGMA2,
            UpdateRule.RGD,
            GAUSS_HERMITE,
            kind,
        )
        psi = run_trial(config, 0, initial=initial).trace.psi_values
        assert psi is not None
        assert np.all(np.diff(psi) <= 1e-8)

    @pytest.mark.parametrize("num_components", [1, 2])
    def test_student(self, num_components: int) -> None:
        means = [0.5] if num_components == 1 else [-1.0, 1.5]
        initial = MixtureState.uniform(
            [StudentTParams([m], [[1.0]], 5.0) for m in means], Family.STUDENT_T
        )
        quadrature = QuadratureConfig(
            kind=GridKind.UNIFORM, order=40000, lower=-2000.0, upper=2000.0, normalisation_tol=1e-4
        )
        config = quadrature_config(
            0.2, 0.5, 0.5, 30, Family.STUDENT_T, UpdateRule.MG, quadrature, "ewsmm"
        )
        psi = run_trial(config, 0, initial=initial).trace.psi_values
        assert psi is not None
        assert np.all(np.diff(psi) <= 1e-6)
