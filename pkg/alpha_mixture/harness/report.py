"""
Replication of trials and the files written for an experiment.

:py:func:`replicate` runs every trial of an experiment (concurrently when
``workers > 1``) and gathers them in trial-index order into an
:py:class:`ExperimentReport`. :py:func:`write_report` then writes the
following to an output directory:

* ``trace.csv``: columns ``iter,vr_mean,vr_p10,vr_p90[,psi_exact],ess_min``.
  The VR bound columns are the mean and the 10th/90th percentiles over
  trials, ``psi_exact`` (quadrature mode only) is the mean over trials and
  ``ess_min`` the smallest nonzero component ESS of any trial.
* ``summary.csv``: a single row with columns
  ``target,rule,sampler,J,gamma,eta,alpha,logmse,trials,seed``.
* ``weights.csv``: columns ``iter,j,lambda`` holding the weight snapshots of
  trial 0.
* ``states/trial_<k>.json``: the final mixture of each trial (see
  :py:meth:`~alpha_mixture.mixture.MixtureState.to_json`), which may be
  reloaded by :py:func:`evaluate_checkpoint`.
* ``trace.gp``: a gnuplot script plotting ``trace.csv``.

Floating point values are written with :py:func:`repr` so that repeated runs
produce byte-identical files.

.. autofunction:: replicate

.. autoclass:: ExperimentReport
    :members:

.. autofunction:: write_report

.. autofunction:: sweep

.. autofunction:: log_mse

.. autodata:: LOG_MSE_FLOOR

.. autofunction:: evaluate_checkpoint

.. autoclass:: CheckpointEvaluation
    :members:
"""

from typing import Iterable, Optional, Sequence, Union

from dataclasses import dataclass

from concurrent.futures import ThreadPoolExecutor

from pathlib import Path

import csv

import logging

import numpy as np
import numpy.typing as npt

from tqdm import tqdm

from alpha_mixture.divergence import psi_alpha_exact, vr_bound_quadrature

from alpha_mixture.harness.config import ExperimentConfig, IntegralMode, SweepSpec

from alpha_mixture.harness.exceptions import ConfigError

from alpha_mixture.harness.templates import trace_plot_template

from alpha_mixture.harness.trial import TrialResult, run_trial, vr_bound_on_batch

from alpha_mixture.mixture import MixtureState, SamplerKind, Schedule, StateFormatError

from alpha_mixture.sampling import draw_samples, rng_stream

from alpha_mixture.targets import Target


__all__ = [
    "LOG_MSE_FLOOR",
    "log_mse",
    "ExperimentReport",
    "replicate",
    "write_report",
    "sweep",
    "CheckpointEvaluation",
    "evaluate_checkpoint",
]


logger = logging.getLogger(__name__)


LOG_MSE_FLOOR = -50.0
"""
Lower bound applied to :py:func:`log_mse` so that an exact fit is reported
as a finite number.
"""


def log_mse(final_states: Sequence[MixtureState], target: Target) -> float:
    """
    Natural log of the mean (over trials) squared Euclidean distance between
    the mean of each mixture and the mean of the target, floored at
    :py:data:`LOG_MSE_FLOOR`.

    >>> from alpha_mixture.targets import builtin_target
    >>> from alpha_mixture.expfam import GaussianParams
    >>> from alpha_mixture.mixture import Family
    >>> state = MixtureState.uniform(
    ...     [GaussianParams(np.full(16, 0.1), np.eye(16))], Family.GAUSSIAN_FULL
    ... )
    >>> round(log_mse([state], builtin_target("ewgmm", 16)), 4)
    -1.8326
    """
    if len(final_states) == 0:
        raise ValueError("log_mse needs at least one final state.")
    true_mean = target.require_true_mean()
    errors = [float(np.sum((s.mixture_mean() - true_mean) ** 2)) for s in final_states]
    mse = float(np.mean(errors))
    if mse <= 0:
        return LOG_MSE_FLOOR
    return max(float(np.log(mse)), LOG_MSE_FLOOR)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """The trials of a replicated experiment, in trial-index order."""

    config: ExperimentConfig
    target: Target
    trials: tuple[TrialResult, ...]

    @property
    def vr_bounds(self) -> npt.NDArray[np.float64]:
        """(trials, N) VR bound traces."""
        return np.array([t.trace.vr_bounds for t in self.trials])

    @property
    def vr_mean(self) -> npt.NDArray[np.float64]:
        return np.mean(self.vr_bounds, axis=0)

    @property
    def vr_p10(self) -> npt.NDArray[np.float64]:
        return np.percentile(self.vr_bounds, 10, axis=0)

    @property
    def vr_p90(self) -> npt.NDArray[np.float64]:
        return np.percentile(self.vr_bounds, 90, axis=0)

    @property
    def psi_mean(self) -> Optional[npt.NDArray[np.float64]]:
        """Mean exact objective per iteration (None unless recorded)."""
        traces = [t.trace.psi_values for t in self.trials]
        if any(trace is None for trace in traces):
            return None
        return np.mean(np.array(traces), axis=0)

    @property
    def ess_min(self) -> npt.NDArray[np.float64]:
        return np.array(
            [min(t.trace[n].ess_min for t in self.trials) for n in range(self.num_iterations)]
        )

    @property
    def num_iterations(self) -> int:
        return len(self.trials[0].trace)

    @property
    def final_states(self) -> list[MixtureState]:
        return [t.final_state for t in self.trials]

    @property
    def log_mse(self) -> Optional[float]:
        """:py:func:`log_mse` of the final states (None when the target mean is unknown)."""
        if self.target.true_mean is None:
            return None
        return log_mse(self.final_states, self.target)


def replicate(config: ExperimentConfig, *, progress: bool = False) -> ExperimentReport:
    """
    Run ``config.trials`` trials using ``config.workers`` threads. The
    result does not depend on the number of workers.
    """
    target = config.target.build()

    def run(trial_index: int) -> TrialResult:
        return run_trial(config, trial_index, target=target)

    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        trials = tuple(
            tqdm(
                executor.map(run, range(config.trials)),
                total=config.trials,
                desc=target.label,
                unit="trial",
                disable=not progress,
                leave=False,
            )
        )

    report = ExperimentReport(config, target, trials)
    logger.info(
        "Ran %d trial(s) of %d iteration(s) on %s.",
        config.trials,
        report.num_iterations,
        target.label,
    )
    return report


def _format(value: Union[float, int, str, None]) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _format_schedule(schedule: Schedule) -> str:
    if isinstance(schedule, tuple):
        return ";".join(repr(float(v)) for v in schedule)
    return repr(float(schedule))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _summary_row(report: ExperimentReport) -> list[str]:
    config = report.config
    return [
        report.target.label,
        config.rule.value,
        config.schedule.sampler.value,
        str(config.num_components),
        _format_schedule(config.schedule.gamma),
        _format_schedule(config.schedule.eta),
        repr(config.schedule.alpha),
        _format(report.log_mse),
        str(config.trials),
        str(config.seed),
    ]


def write_report(report: ExperimentReport, out_dir: Union[str, Path]) -> None:
    """
    Write the files described in this module's documentation to
    ``out_dir`` (created if needed). Existing files are overwritten.
    """
    out_dir = Path(out_dir)
    (out_dir / "states").mkdir(parents=True, exist_ok=True)

    psi = report.psi_mean
    header = ["iter", "vr_mean", "vr_p10", "vr_p90"]
    if psi is not None:
        header.append("psi_exact")
    header.append("ess_min")
    columns: list[npt.NDArray[np.float64]] = [report.vr_mean, report.vr_p10, report.vr_p90]
    if psi is not None:
        columns.append(psi)
    columns.append(report.ess_min)
    _write_csv(
        out_dir / "trace.csv",
        header,
        (
            [str(n)] + [repr(float(column[n])) for column in columns]
            for n in range(report.num_iterations)
        ),
    )

    _write_csv(
        out_dir / "summary.csv",
        ["target", "rule", "sampler", "J", "gamma", "eta", "alpha", "logmse", "trials", "seed"],
        [_summary_row(report)],
    )

    _write_csv(
        out_dir / "weights.csv",
        ["iter", "j", "lambda"],
        (
            [str(record.iteration), str(j), repr(float(weight))]
            for record in report.trials[0].trace
            if record.weights is not None
            for j, weight in enumerate(record.weights)
        ),
    )

    for trial in report.trials:
        path = out_dir / "states" / f"trial_{trial.trial_index:03d}.json"
        path.write_text(trial.final_state.to_json(), encoding="utf-8")

    (out_dir / "trace.gp").write_text(
        trace_plot_template.render(
            title=f"{report.target.label} ({report.config.rule.value})",
            psi_exact=psi is not None,
        ),
        encoding="utf-8",
    )


def sweep(
    config: ExperimentConfig,
    spec: SweepSpec,
    out_dir: Union[str, Path],
    *,
    progress: bool = False,
) -> list[ExperimentReport]:
    """
    Replicate ``config`` for every cell of ``spec``, writing each cell's
    report to ``out_dir/cell_<k>/`` and one row per cell to
    ``out_dir/index.csv``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    rows = []
    for k, (eta, gamma, num_components, cell_config) in enumerate(spec.cells(config)):
        cell_dir = f"cell_{k:03d}"
        logger.info(
            "Sweep cell %d: eta=%s gamma=%s J=%d",
            k,
            _format_schedule(eta),
            _format_schedule(gamma),
            num_components,
        )
        report = replicate(cell_config, progress=progress)
        write_report(report, out_dir / cell_dir)
        reports.append(report)
        rows.append(
            [
                str(k),
                _format_schedule(eta),
                _format_schedule(gamma),
                str(num_components),
                _format(report.log_mse),
                cell_dir,
            ]
        )
    _write_csv(out_dir / "index.csv", ["cell", "eta", "gamma", "J", "logmse", "path"], rows)
    return reports


@dataclass(frozen=True, eq=False)
class CheckpointEvaluation:
    path: Path
    state: MixtureState

    vr_bound: float
    """VR bound of the saved mixture (by quadrature in quadrature mode)."""

    psi_exact: Optional[float]

    squared_error: Optional[float]
    """Squared distance between the mixture mean and the target mean."""


def evaluate_checkpoint(
    paths: Sequence[Union[str, Path]], config: ExperimentConfig
) -> tuple[list[CheckpointEvaluation], Optional[float]]:
    """
    Recompute the metrics of saved final states against the target of
    ``config``.

    In Monte Carlo mode the VR bound of checkpoint ``k`` is estimated from
    ``config.schedule.num_samples`` draws from the saved mixture itself,
    using random stream ``(seed, k, 0)``.

    Returns
    =======
    evaluations : [:py:class:`CheckpointEvaluation`, ...]
    log_mse : float or None
        :py:func:`log_mse` over all checkpoints, when the target mean is
        known.
    """
    target = config.target.build()
    states = []
    for path in map(Path, paths):
        try:
            states.append((path, MixtureState.from_json(path.read_text(encoding="utf-8"))))
        except (OSError, StateFormatError) as exc:
            raise ConfigError(f"Could not load checkpoint {path}: {exc}") from exc
    if not states:
        raise ConfigError("No checkpoints given.")

    alpha = config.schedule.alpha
    grid = None
    if config.integrals == IntegralMode.QUADRATURE:
        grid = config.quadrature.build(target.dimension)

    evaluations = []
    for k, (path, state) in enumerate(states):
        if state.dimension != target.dimension:
            raise ConfigError(
                f"{path} has dimension {state.dimension}, "
                f"the target has dimension {target.dimension}."
            )
        psi = None
        if grid is not None:
            vr_bound = vr_bound_quadrature(alpha, state.log_density, target, grid)
            if config.quadrature.psi_exact:
                psi = psi_alpha_exact(
                    alpha,
                    state.log_density,
                    target,
                    grid,
                    normalisation_tol=config.quadrature.normalisation_tol,
                )
        else:
            rng = rng_stream(config.seed, k, 0)
            batch = draw_samples(state, SamplerKind.IS_N, config.schedule.num_samples, rng)
            log_p = target.log_p(batch.points)
            vr_bound = vr_bound_on_batch(alpha, batch.log_q, log_p, batch.log_q)
        squared_error = None
        if target.true_mean is not None:
            squared_error = float(np.sum((state.mixture_mean() - target.true_mean) ** 2))
        evaluations.append(CheckpointEvaluation(path, state, vr_bound, psi, squared_error))

    mse = None
    if target.true_mean is not None:
        mse = log_mse([state for _, state in states], target)
    return evaluations, mse
