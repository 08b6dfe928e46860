"""
Execution of a single trial of an experiment.

Each iteration of :py:func:`run_trial`:

1. draws one batch of samples from the proposal (or, in quadrature mode,
   uses the fixed grid),
2. estimates the responsibility integrals and moments,
3. records the VR bound (and, in quadrature mode, the exact objective) of
   the current mixture,
4. updates the components (MG or RGD),
5. updates the weights.

Steps 4 and 5 both use the statistics computed in step 2. The same batch
serves every estimate of an iteration, so a trial evaluates the target
exactly N * M times for its updates.

.. autofunction:: run_trial

.. autofunction:: initial_state

.. autofunction:: vr_bound_on_batch

.. autoclass:: TrialResult
    :members:

.. autoclass:: IterationTrace
    :members:

.. autoclass:: IterationRecord
    :members:
"""

from typing import Iterator, Optional

from dataclasses import dataclass, replace

import logging

import time

import numpy as np
import numpy.typing as npt

from alpha_mixture.components import mg_update, rgd_update_means, student_mixture_update

from alpha_mixture.divergence import LogDensity, psi_alpha_exact, vr_bound_mc, vr_bound_quadrature

from alpha_mixture.expfam import GaussianParams, InvalidParametersError

from alpha_mixture.harness.config import ExperimentConfig, IntegralMode, UpdateRule

from alpha_mixture.harness.exceptions import NumericDegeneracyError

from alpha_mixture.mixture import (
    Component,
    Diagnostics,
    Family,
    MixtureInvariantError,
    MixtureState,
    update_weights,
)

from alpha_mixture.sampling import (
    WeightedStats,
    draw_samples,
    estimate_stats,
    quadrature_stats,
    rng_stream,
)

from alpha_mixture.student import StudentTParams

from alpha_mixture.targets import Target


__all__ = [
    "IterationRecord",
    "IterationTrace",
    "TrialResult",
    "initial_state",
    "run_trial",
    "vr_bound_on_batch",
]


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """Metrics of the mixture at the start of one iteration."""

    iteration: int

    vr_bound: float
    """VR bound estimate (exact in quadrature mode)."""

    psi_exact: Optional[float]
    """The objective evaluated by quadrature, when enabled."""

    weights: Optional[npt.NDArray[np.float64]]
    """Weight snapshot (None when snapshots are thinned out)."""

    ess: npt.NDArray[np.float64]
    """Per-component effective sample sizes."""

    diagnostics: Diagnostics

    wall_time: float
    """Seconds spent on the iteration."""

    @property
    def skipped(self) -> int:
        """Total number of skip events during the iteration."""
        return self.diagnostics.total

    @property
    def ess_min(self) -> float:
        """Smallest nonzero ESS (zero if no component was available)."""
        positive = self.ess[self.ess > 0]
        return float(np.min(positive)) if len(positive) else 0.0


@dataclass(frozen=True)
class IterationTrace:
    records: tuple[IterationRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[IterationRecord]:
        return iter(self.records)

    def __getitem__(self, n: int) -> IterationRecord:
        return self.records[n]

    @property
    def vr_bounds(self) -> npt.NDArray[np.float64]:
        return np.array([r.vr_bound for r in self.records])

    @property
    def psi_values(self) -> Optional[npt.NDArray[np.float64]]:
        if any(r.psi_exact is None for r in self.records):
            return None
        return np.array([r.psi_exact for r in self.records])


@dataclass(frozen=True, eq=False)
class TrialResult:
    trial_index: int
    trace: IterationTrace
    initial_state: MixtureState
    final_state: MixtureState

    target_evaluations: int
    """Target density evaluations made by the updates."""

    metric_evaluations: int
    """Target density evaluations made only to compute metrics."""


class _CountingLogDensity:
    """Wraps a log-density, counting the points it is evaluated at."""

    def __init__(self, log_p: LogDensity) -> None:
        self._log_p = log_p
        self.evaluations = 0

    def __call__(self, points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        self.evaluations += len(points)
        return self._log_p(points)


def initial_state(config: ExperimentConfig, trial_index: int, dimension: int) -> MixtureState:
    """
    Draw the initial mixture of a trial from stream 0 of the trial.
    """
    rng = rng_stream(config.seed, trial_index, 0)
    J = config.num_components
    means = rng.normal(0.0, np.sqrt(config.init.mean_variance), size=(J, dimension))
    covariance = config.sigma2 * np.eye(dimension)
    components: list[Component]
    if config.family == Family.STUDENT_T:
        components = [StudentTParams(m, covariance, config.init.dof) for m in means]
    else:
        components = [GaussianParams(m, covariance) for m in means]
    return MixtureState(config.init.initial_weights(J), tuple(components), config.family)


def vr_bound_on_batch(
    alpha: float,
    log_q: npt.NDArray[np.float64],
    log_p: npt.NDArray[np.float64],
    log_proposal: npt.NDArray[np.float64],
) -> float:
    """
    :py:func:`~alpha_mixture.divergence.vr_bound_mc` of a batch which may
    contain points outside the support of the target. Those points contribute
    nothing to the integral but still count towards the batch size.
    """
    finite = np.isfinite(log_p)
    num_finite = int(np.count_nonzero(finite))
    if num_finite == 0:
        return float("-inf")
    estimate = vr_bound_mc(alpha, log_q[finite], log_p[finite], log_proposal[finite])
    return estimate + float(np.log(num_finite / len(log_p))) / (1 - alpha)


def _masses(
    stats: WeightedStats, kappa: float, diagnostics: Diagnostics
) -> Optional[npt.NDArray[np.float64]]:
    """
    Responsibility masses to feed the updates. When kappa is zero only their
    ratios matter so they are rescaled to keep the largest at one. Returns
    None when every mass vanishes.
    """
    log_mass = stats.log_mass
    finite = np.isfinite(log_mass)
    if not np.any(finite):
        return None
    if kappa == 0:
        log_mass = log_mass - np.max(log_mass[finite])
    masses = np.exp(log_mass)
    tiny = np.finfo(float).tiny
    clamped = ~(masses >= tiny)
    if np.any(clamped):
        diagnostics.clamped_masses += int(np.count_nonzero(clamped))
        masses = np.where(clamped, tiny, masses)
    return masses


def _update(
    config: ExperimentConfig,
    state: MixtureState,
    stats: WeightedStats,
    n: int,
    diagnostics: Diagnostics,
) -> MixtureState:
    schedule = config.schedule
    alpha = schedule.alpha
    gamma = schedule.gamma_at(n)
    masses = _masses(stats, schedule.kappa_at(n), diagnostics)
    if masses is None:
        logger.debug("Iteration %d skipped: every responsibility mass vanished.", n)
        return state
    moments = [stats.moment_estimate(j, float(masses[j])) for j in range(state.num_components)]

    components: tuple[Component, ...]
    if config.rule == UpdateRule.RGD:
        means = rgd_update_means(state, moments, gamma, alpha, diagnostics)
        components = tuple(c.with_mean(m) for c, m in zip(state.components, means))
    elif state.family == Family.STUDENT_T:
        components = student_mixture_update(state, stats, gamma, diagnostics)
    else:
        components = mg_update(state, moments, gamma, diagnostics)

    weights = update_weights(
        state.weights, masses, schedule.eta_at(n), schedule.kappa_at(n), alpha, diagnostics
    )
    try:
        return MixtureState(weights, components, state.family)
    except (MixtureInvariantError, InvalidParametersError) as exc:
        raise NumericDegeneracyError(f"Iteration {n} produced an invalid mixture: {exc}") from exc


def run_trial(
    config: ExperimentConfig,
    trial_index: int,
    *,
    initial: Optional[MixtureState] = None,
    target: Optional[Target] = None,
) -> TrialResult:
    """
    Run one trial of an experiment.

    Parameters
    ==========
    config : :py:class:`~alpha_mixture.harness.config.ExperimentConfig`
    trial_index : int
        Selects the random streams used by the trial.
    initial : :py:class:`~alpha_mixture.mixture.MixtureState`, optional
        Overrides the randomly drawn initial mixture.
    target : :py:class:`~alpha_mixture.targets.Target`, optional
        Overrides the target built from ``config.target``.

    Returns
    =======
    :py:class:`TrialResult`
        The result depends only on ``config`` and ``trial_index``.
    """
    if target is None:
        target = config.target.build()
    state = initial if initial is not None else initial_state(config, trial_index, target.dimension)
    first_state = state
    schedule = config.schedule
    alpha = schedule.alpha

    update_log_p = _CountingLogDensity(target.log_p)
    metric_log_p = _CountingLogDensity(target.log_p)
    update_target = replace(target, log_p=update_log_p)
    metric_target = replace(target, log_p=metric_log_p)

    grid = None
    grid_log_p = None
    if config.integrals == IntegralMode.QUADRATURE:
        grid = config.quadrature.build(target.dimension)
        grid_log_p = update_log_p(grid.nodes)

    snapshot_all = state.num_components <= config.snapshot_limit
    last = schedule.num_iterations - 1

    records = []
    for n in range(schedule.num_iterations):
        start = time.perf_counter()
        diagnostics = Diagnostics()
        psi = None
        if grid is None:
            rng = rng_stream(config.seed, trial_index, n + 1)
            batch = draw_samples(state, schedule.sampler, schedule.num_samples, rng)
            log_p = update_log_p(batch.points)
            stats = estimate_stats(
                batch, state, update_target, alpha, log_p=log_p, diagnostics=diagnostics
            )
            vr_bound = vr_bound_on_batch(alpha, stats.log_mixture, log_p, batch.log_q)
        else:
            stats = quadrature_stats(
                grid, state, update_target, alpha, log_p=grid_log_p, diagnostics=diagnostics
            )
            vr_bound = vr_bound_quadrature(alpha, state.log_density, metric_target, grid)
            if config.quadrature.psi_exact:
                psi = psi_alpha_exact(
                    alpha,
                    state.log_density,
                    metric_target,
                    grid,
                    normalisation_tol=config.quadrature.normalisation_tol,
                )

        snapshot = state.weights if snapshot_all or n in (0, last) else None
        next_state = _update(config, state, stats, n, diagnostics)
        records.append(
            IterationRecord(
                iteration=n,
                vr_bound=vr_bound,
                psi_exact=psi,
                weights=snapshot,
                ess=stats.ess,
                diagnostics=diagnostics,
                wall_time=time.perf_counter() - start,
            )
        )
        if diagnostics.total:
            logger.debug("Trial %d iteration %d: %r", trial_index, n, diagnostics)
        state = next_state

    return TrialResult(
        trial_index=trial_index,
        trace=IterationTrace(tuple(records)),
        initial_state=first_state,
        final_state=state,
        target_evaluations=update_log_p.evaluations,
        metric_evaluations=metric_log_p.evaluations,
    )
