r"""
Importance-sampling proposals and the shared-sample estimators feeding the
mixture updates.

Each iteration draws a single batch of :math:`M` points from a proposal
:math:`q_n` (see :py:class:`~alpha_mixture.mixture.SamplerKind`). The same
batch serves the weight update, the component updates and the VR bound
estimate. For every component the unbiased estimator

.. math::

    \hat I_j = \frac{1}{M} \sum_{m=1}^M \hat\varphi_j(Y_m), \qquad
    \hat\varphi_j = \frac{k(\theta_j, \cdot)}{q_n}
        \left(\frac{\mu k}{p}\right)^{\alpha - 1}

is formed, along with the self-normalised moments of :math:`\hat\varphi_j`.
Everything is computed in log space.

The same :py:class:`WeightedStats` can be produced deterministically from a
quadrature grid with :py:func:`quadrature_stats`, so that every update rule
also runs with (near) exact integrals.

Random number streams
=====================

Each (master seed, trial, iteration) triple gets an independent counter-based
Philox stream (:py:func:`rng_stream`). Iteration 0 is reserved for drawing the
initial mixture; sampling in iteration ``n`` uses stream ``n + 1``. Results
therefore do not depend on the order in which trials are executed.

.. autofunction:: rng_stream

.. autoclass:: SampleBatch
    :members:

.. autofunction:: draw_samples

.. autoclass:: WeightedStats
    :members:

.. autofunction:: estimate_stats

.. autofunction:: quadrature_stats

.. autofunction:: effective_sample_size
"""

from typing import Optional, TYPE_CHECKING

from dataclasses import dataclass

import logging

import numpy as np
import numpy.typing as npt

from scipy.special import logsumexp

from alpha_mixture.expfam import MomentEstimate

from alpha_mixture.mixture import (
    Diagnostics,
    MixtureState,
    SamplerKind,
    log_responsibilities,
)

from alpha_mixture.quadrature import QuadratureGrid

from alpha_mixture.student import StudentTParams

if TYPE_CHECKING:
    from alpha_mixture.targets import Target


__all__ = [
    "SamplerKind",
    "SampleBatch",
    "WeightedStats",
    "rng_stream",
    "draw_samples",
    "estimate_stats",
    "quadrature_stats",
    "effective_sample_size",
    "UNDERFLOW_LOG",
]


logger = logging.getLogger(__name__)


UNDERFLOW_LOG = -745.0
"""
Natural-log threshold below which a component's responsibility mass is
treated as having underflowed.
"""


def rng_stream(master_seed: int, trial_index: int, iteration: int) -> np.random.Generator:
    """
    An independent random stream for one iteration of one trial.
    """
    if min(master_seed, trial_index, iteration) < 0:
        raise ValueError("Seeds, trial indices and iterations must be nonnegative.")
    seed_sequence = np.random.SeedSequence([master_seed, trial_index, iteration])
    return np.random.Generator(np.random.Philox(seed_sequence))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """
    One batch of proposal samples.
    """

    points: npt.NDArray[np.float64]
    """(M, d) sample locations."""

    log_q: npt.NDArray[np.float64]
    """(M,) log-density of the full proposal at each sample."""

    component_indices: npt.NDArray[np.int64]
    """(M,) zero-based index of the component each sample was drawn from."""

    sampler: SamplerKind

    @property
    def num_samples(self) -> int:
        return len(self.log_q)


def draw_samples(
    state: MixtureState,
    kind: SamplerKind,
    num_samples: int,
    rng: np.random.Generator,
) -> SampleBatch:
    """
    Draw a batch from the IS-n proposal (the current mixture) or the IS-unif
    proposal (the current components with uniform weights). Component
    indices are resampled on every call.
    """
    if num_samples < 1:
        raise ValueError("At least one sample must be drawn.")
    J, d = state.num_components, state.dimension

    if kind == SamplerKind.IS_N:
        indices = rng.choice(J, size=num_samples, p=state.weights)
    else:
        indices = rng.integers(0, J, size=num_samples)
    normals = rng.standard_normal((num_samples, d))
    scales: Optional[npt.NDArray[np.float64]] = None
    if not state.family.is_gaussian:
        half_dofs = np.array([c.dof / 2 for c in state.components])[indices]
        scales = rng.gamma(shape=half_dofs, scale=1 / half_dofs)

    points = np.empty((num_samples, d))
    for j, component in enumerate(state.components):
        selected = indices == j
        if isinstance(component, StudentTParams):
            assert scales is not None
            points[selected] = component.transform(normals[selected], scales[selected])
        else:
            points[selected] = component.transform(normals[selected])

    if kind == SamplerKind.IS_N:
        log_q = state.log_density(points)
    else:
        log_q = logsumexp(state.component_log_densities(points), axis=0) - np.log(J)

    return SampleBatch(points, log_q, indices.astype(np.int64), kind)


def effective_sample_size(log_weights: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """
    :math:`(\\sum w)^2 / \\sum w^2` along the last axis, from unnormalised log
    weights. Zero where every weight vanishes.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    with np.errstate(invalid="ignore"):
        ess = np.exp(2 * logsumexp(log_weights, axis=-1) - logsumexp(2 * log_weights, axis=-1))
    return np.nan_to_num(ess, nan=0.0)


@dataclass(frozen=True, eq=False)
class WeightedStats:
    """
    Per-component responsibility-weighted statistics of a set of points.
    """

    points: npt.NDArray[np.float64]
    """(n, d) points the statistics were computed from."""

    log_p: npt.NDArray[np.float64]
    """(n,) target log-density at the points."""

    log_weights: npt.NDArray[np.float64]
    """
    (J, n) log of the self-normalised weights of each point under each
    component's responsibility (each row sums to one in linear space when
    the component is available).
    """

    log_mass: npt.NDArray[np.float64]
    """(J,) log of the estimated responsibility integrals :math:`\\hat I_j`."""

    means: npt.NDArray[np.float64]
    """(J, d) self-normalised means (NaN for unavailable components)."""

    covariances: npt.NDArray[np.float64]
    """(J, d, d) self-normalised covariances (NaN when unavailable)."""

    ess: npt.NDArray[np.float64]
    """(J,) effective sample sizes (zero when unavailable)."""

    available: npt.NDArray[np.bool_]
    """(J,) False for components whose mass underflowed."""

    log_mixture: npt.NDArray[np.float64]
    """(n,) log variational density at the points."""

    @property
    def mass(self) -> npt.NDArray[np.float64]:
        return np.exp(self.log_mass)

    @property
    def num_unavailable(self) -> int:
        return int(np.count_nonzero(~self.available))

    def moment_estimate(self, j: int, mass: Optional[float] = None) -> Optional[MomentEstimate]:
        """
        Moments of component ``j`` (None when unavailable). The mass may be
        overridden, e.g. with a rescaled value.
        """
        if not self.available[j]:
            return None
        return MomentEstimate(
            float(np.exp(self.log_mass[j])) if mass is None else mass,
            self.means[j],
            self.covariances[j],
        )


def _weighted_stats(
    points: npt.NDArray[np.float64],
    log_p: npt.NDArray[np.float64],
    log_terms: npt.NDArray[np.float64],
    log_mixture: npt.NDArray[np.float64],
    diagnostics: Optional[Diagnostics],
) -> WeightedStats:
    J = log_terms.shape[0]
    n, d = points.shape
    log_mass = logsumexp(log_terms, axis=1)
    available = np.isfinite(log_mass) & (log_mass > UNDERFLOW_LOG)

    means = np.full((J, d), np.nan)
    covariances = np.full((J, d, d), np.nan)
    log_weights = np.full((J, n), -np.inf)
    for j in np.flatnonzero(available):
        log_weights[j] = log_terms[j] - log_mass[j]
        w = np.exp(log_weights[j])
        means[j] = w @ points
        centred = points - means[j]
        covariance = (w[:, None] * centred).T @ centred
        covariances[j] = (covariance + covariance.T) / 2

    ess = np.where(available, effective_sample_size(log_terms), 0.0)

    num_unavailable = int(np.count_nonzero(~available))
    if num_unavailable:
        logger.debug("%d component(s) have an underflowing responsibility mass.", num_unavailable)
        if diagnostics is not None:
            diagnostics.unavailable_components += num_unavailable

    return WeightedStats(
        points=points,
        log_p=log_p,
        log_weights=log_weights,
        log_mass=log_mass,
        means=means,
        covariances=covariances,
        ess=ess,
        available=available,
        log_mixture=log_mixture,
    )


def estimate_stats(
    batch: SampleBatch,
    state: MixtureState,
    target: "Target",
    alpha: float,
    *,
    log_p: Optional[npt.NDArray[np.float64]] = None,
    diagnostics: Optional[Diagnostics] = None,
) -> WeightedStats:
    """
    Importance-sampling estimates of the responsibility integrals and
    moments from a batch drawn with :py:func:`draw_samples`.

    Parameters
    ==========
    batch : SampleBatch
    state : :py:class:`~alpha_mixture.mixture.MixtureState`
        The mixture the batch was drawn from.
    target : :py:class:`~alpha_mixture.targets.Target`
    alpha : float
    log_p : array, optional
        Precomputed target log-density at the batch points. If omitted the
        target is evaluated here.
    diagnostics : :py:class:`~alpha_mixture.mixture.Diagnostics`, optional
    """
    if log_p is None:
        log_p = target.log_p(batch.points)
    log_p = np.asarray(log_p, dtype=float)
    responsibilities = log_responsibilities(state, batch.points, log_p, alpha, diagnostics)
    log_terms = responsibilities.log_phi - batch.log_q - np.log(batch.num_samples)
    return _weighted_stats(
        batch.points, log_p, log_terms, responsibilities.log_mixture, diagnostics
    )


def quadrature_stats(
    grid: QuadratureGrid,
    state: MixtureState,
    target: "Target",
    alpha: float,
    *,
    log_p: Optional[npt.NDArray[np.float64]] = None,
    diagnostics: Optional[Diagnostics] = None,
) -> WeightedStats:
    """
    Quadrature counterpart of :py:func:`estimate_stats`: the responsibility
    integrals and moments evaluated on ``grid``.
    """
    if log_p is None:
        log_p = target.log_p(grid.nodes)
    log_p = np.asarray(log_p, dtype=float)
    responsibilities = log_responsibilities(state, grid.nodes, log_p, alpha, diagnostics)
    log_terms = responsibilities.log_phi + grid.log_weights
    return _weighted_stats(
        grid.nodes, log_p, log_terms, responsibilities.log_mixture, diagnostics
    )
