r"""
Mixture-model variational families and their weight updates.

A variational mixture

.. math::

    \mu k(y) = \sum_{j=1}^J \lambda_j k(\theta_j, y)

is described by a :py:class:`MixtureState`. Every update of the mixture is
driven by the responsibilities

.. math::

    \varphi_j(y) = k(\theta_j, y) \left(\frac{\mu k(y)}{p(y)}\right)^{\alpha - 1}

computed by :py:func:`log_responsibilities`. Given (estimates of) their
integrals :math:`I_j = \int \varphi_j`, the mixture weights are updated by
:py:func:`update_weights`:

.. math::

    \lambda_j' \propto \lambda_j \left[I_j + (\alpha - 1)\kappa\right]^\eta

The Power Descent transition (:py:func:`power_descent_step`) is the same
update written in terms of :math:`b_j = (I_j - 1)/(\alpha - 1)`, with its
exponent rescaled by :math:`1/(1-\alpha)`, and extends to negative α.

Mixture state
=============

.. autoclass:: Family
    :members:

.. autoclass:: MixtureState
    :members:

.. autoclass:: ScheduleConfig
    :members:

.. autoclass:: SamplerKind
    :members:

.. autoclass:: Diagnostics
    :members:

Responsibilities
================

.. autoclass:: Responsibilities
    :members:

.. autofunction:: log_responsibilities

.. autofunction:: log_responsibility

.. autofunction:: eval_log_mixture

Weight updates
==============

.. autofunction:: update_weights

.. autofunction:: power_descent_step

.. autofunction:: b_from_integrals

.. autofunction:: power_descent_eta_range

Exceptions
==========

.. autoexception:: MixtureInvariantError

.. autoexception:: WeightUpdateError

.. autoexception:: ScheduleError

.. autoexception:: StateFormatError
"""

from typing import Any, Optional, Sequence, TYPE_CHECKING, Union

from dataclasses import dataclass, field, fields

from enum import Enum

import json

import logging

import warnings

import numpy as np
import numpy.typing as npt

from scipy.special import logsumexp

from alpha_mixture.divergence import DivergenceDomainError

from alpha_mixture.expfam import GaussianParams

from alpha_mixture.student import StudentTParams

if TYPE_CHECKING:
    from alpha_mixture.targets import Target


__all__ = [
    "Family",
    "SamplerKind",
    "Component",
    "Diagnostics",
    "MixtureState",
    "Schedule",
    "ScheduleConfig",
    "Responsibilities",
    "log_responsibilities",
    "log_responsibility",
    "eval_log_mixture",
    "update_weights",
    "power_descent_step",
    "power_descent_eta_range",
    "b_from_integrals",
    "WEIGHT_FLOOR",
    "MixtureInvariantError",
    "WeightUpdateError",
    "ScheduleError",
    "StateFormatError",
]


logger = logging.getLogger(__name__)


WEIGHT_FLOOR = 1e-15
"""Smallest weight kept after an update (before renormalisation)."""

STATE_FORMAT_VERSION = 1


class MixtureInvariantError(ValueError):
    """Thrown when a mixture state violates its invariants."""


class WeightUpdateError(ValueError):
    """
    Thrown when a weight update bracket is nonpositive for some component.
    """

    component: int

    def __init__(self, component: int, bracket: float) -> None:
        self.component = component
        super().__init__(
            f"Weight update bracket for component {component} is {bracket!r}; "
            f"it must be positive."
        )


class ScheduleError(ValueError):
    """Thrown when a hyperparameter schedule is invalid."""


class StateFormatError(ValueError):
    """Thrown when a serialised mixture state cannot be read."""


class Family(Enum):
    """The parametric family shared by all components of a mixture."""

    GAUSSIAN_FULL = "gaussian-full"
    GAUSSIAN_DIAGONAL = "gaussian-diagonal"
    GAUSSIAN_FIXED_SIGMA2 = "gaussian-fixed-sigma2"
    STUDENT_T = "student-t"

    @property
    def is_gaussian(self) -> bool:
        return self != Family.STUDENT_T


class SamplerKind(Enum):
    """Proposal used to draw the samples of each iteration."""

    IS_N = "is_n"
    """Sample from the current mixture."""

    IS_UNIF = "is_unif"
    """Sample from the current components with uniform mixture weights."""


Component = Union[GaussianParams, StudentTParams]


@dataclass
class Diagnostics:
    """
    Counters of the numerical skip paths taken during an update. None of
    these events is an error; they are reported alongside each iteration.
    """

    excluded_points: int = 0
    """Points dropped because the target log-density was not finite."""

    unavailable_components: int = 0
    """Components whose responsibility mass underflowed."""

    floored_weights: int = 0
    """Weights raised to :py:data:`WEIGHT_FLOOR`."""

    clamped_masses: int = 0
    """Responsibility masses which underflowed to zero and were clamped."""

    gamma_halvings: int = 0
    """Step-size halvings needed to keep covariances positive definite."""

    frozen_components: int = 0
    """Components left unchanged after exhausting step-size halvings."""

    skipped_mean_updates: int = 0
    """Iterations whose gradient mean update had a vanishing denominator."""

    @property
    def total(self) -> int:
        return sum(getattr(self, f.name) for f in fields(self))


def _as_weights(weights: npt.ArrayLike) -> npt.NDArray[np.float64]:
    return np.array(weights, dtype=float).reshape(-1)


def _check_simplex(weights: npt.NDArray[np.float64]) -> None:
    if len(weights) < 1:
        raise MixtureInvariantError("A mixture needs at least one component.")
    if not np.all(weights > 0):
        raise MixtureInvariantError("Mixture weights must all be positive.")
    if not abs(float(np.sum(weights)) - 1.0) <= 1e-12:
        raise MixtureInvariantError(
            f"Mixture weights must sum to one, got {float(np.sum(weights))!r}."
        )


@dataclass(frozen=True, eq=False)
class MixtureState:
    """
    An immutable snapshot of a variational mixture.
    """

    weights: npt.NDArray[np.float64]
    """Strictly positive weights summing to one."""

    components: tuple[Component, ...]

    family: Family

    def __post_init__(self) -> None:
        weights = _as_weights(self.weights)
        _check_simplex(weights)
        components = tuple(self.components)
        if len(components) != len(weights):
            raise MixtureInvariantError(
                f"Got {len(weights)} weights but {len(components)} components."
            )
        expected_type = StudentTParams if self.family == Family.STUDENT_T else GaussianParams
        for j, component in enumerate(components):
            if not isinstance(component, expected_type):
                raise MixtureInvariantError(
                    f"Component {j} is a {type(component).__name__}, "
                    f"expected {expected_type.__name__} for {self.family.value}."
                )
            if component.dimension != components[0].dimension:
                raise MixtureInvariantError("All components must share a dimension.")
            if self.family == Family.GAUSSIAN_DIAGONAL:
                assert isinstance(component, GaussianParams)
                cov = component.covariance
                if np.any(cov != np.diag(np.diag(cov))):
                    raise MixtureInvariantError(
                        f"Component {j} of a diagonal mixture has a non-diagonal covariance."
                    )
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @classmethod
    def uniform(cls, components: Sequence[Component], family: Family) -> "MixtureState":
        """A mixture with equal weights."""
        return cls(np.full(len(components), 1 / len(components)), tuple(components), family)

    @property
    def num_components(self) -> int:
        return len(self.weights)

    @property
    def dimension(self) -> int:
        return self.components[0].dimension

    @property
    def means(self) -> npt.NDArray[np.float64]:
        """(J, d) array of component means (locations)."""
        return np.stack([c.mean for c in self.components])

    def mixture_mean(self) -> npt.NDArray[np.float64]:
        """:math:`\\sum_j \\lambda_j m_j`."""
        return self.weights @ self.means  # type: ignore[no-any-return]

    def component_log_densities(
        self, points: npt.NDArray[np.float64]
    ) -> npt.NDArray[np.float64]:
        """(J, n) array of :math:`\\log k(\\theta_j, y)`."""
        points = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.stack([c.log_density(points) for c in self.components])

    def log_density(self, points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """:math:`\\log \\mu k(y)` at each of an (n, d) array of points."""
        return logsumexp(  # type: ignore[no-any-return]
            np.log(self.weights)[:, None] + self.component_log_densities(points),
            axis=0,
        )

    def with_weights(self, weights: npt.ArrayLike) -> "MixtureState":
        return MixtureState(_as_weights(weights), self.components, self.family)

    def with_components(self, components: Sequence[Component]) -> "MixtureState":
        return MixtureState(self.weights, tuple(components), self.family)

    def with_means(self, means: npt.NDArray[np.float64]) -> "MixtureState":
        return self.with_components(
            [c.with_mean(m) for c, m in zip(self.components, means)]
        )

    def to_json(self) -> str:
        """
        Serialise to a versioned JSON document. Matrices are flattened
        row-major.
        """
        components: list[dict[str, Any]] = []
        for c in self.components:
            if isinstance(c, StudentTParams):
                components.append(
                    {
                        "mean": c.mean.tolist(),
                        "scale": c.scale.reshape(-1).tolist(),
                        "dof": c.dof,
                    }
                )
            else:
                components.append(
                    {
                        "mean": c.mean.tolist(),
                        "covariance": c.covariance.reshape(-1).tolist(),
                    }
                )
        return json.dumps(
            {
                "version": STATE_FORMAT_VERSION,
                "family": self.family.value,
                "dimension": self.dimension,
                "weights": self.weights.tolist(),
                "components": components,
            },
            indent=1,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, document: str) -> "MixtureState":
        """Inverse of :py:meth:`to_json`."""
        try:
            data = json.loads(document)
            if data["version"] != STATE_FORMAT_VERSION:
                raise StateFormatError(
                    f"Unsupported state format version {data['version']!r}."
                )
            family = Family(data["family"])
            d = int(data["dimension"])
            components: list[Component] = []
            for c in data["components"]:
                mean = np.asarray(c["mean"], dtype=float)
                if family == Family.STUDENT_T:
                    scale = np.asarray(c["scale"], dtype=float).reshape(d, d)
                    components.append(StudentTParams(mean, scale, float(c["dof"])))
                else:
                    cov = np.asarray(c["covariance"], dtype=float).reshape(d, d)
                    components.append(GaussianParams(mean, cov))
            return cls(np.asarray(data["weights"], dtype=float), tuple(components), family)
        except StateFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise StateFormatError(f"Malformed mixture state: {exc}") from exc


Schedule = Union[float, tuple[float, ...]]


@dataclass(frozen=True)
class ScheduleConfig:
    """
    Hyperparameters of the monotonic mixture updates. Each of ``eta``,
    ``kappa`` and ``gamma`` is either a constant or a tuple with one value
    per iteration.
    """

    alpha: float
    """In [0, 1)."""

    num_samples: int
    """Samples drawn per iteration (M)."""

    num_iterations: int
    """Number of iterations (N)."""

    eta: Schedule = 0.0
    """Weight-update exponent in [0, 1]; 0 freezes the weights."""

    kappa: Schedule = 0.0
    """Weight-update offset satisfying (alpha - 1) * kappa >= 0."""

    gamma: Schedule = 1.0
    """Component step size in (0, 1]."""

    sampler: SamplerKind = SamplerKind.IS_N

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ScheduleError(f"alpha must lie in [0, 1), got {self.alpha}.")
        if self.num_samples < 1:
            raise ScheduleError("At least one sample per iteration is required.")
        if self.num_iterations < 1:
            raise ScheduleError("At least one iteration is required.")
        for name in ("eta", "kappa", "gamma"):
            value = getattr(self, name)
            if isinstance(value, (list, tuple, np.ndarray)):
                value = tuple(float(v) for v in value)
                if len(value) != self.num_iterations:
                    raise ScheduleError(
                        f"{name} schedule has {len(value)} entries "
                        f"but there are {self.num_iterations} iterations."
                    )
            else:
                value = float(value)
            object.__setattr__(self, name, value)

        for n in range(self.num_iterations):
            if not 0 <= self.eta_at(n) <= 1:
                raise ScheduleError(f"eta must lie in [0, 1], got {self.eta_at(n)}.")
            if not (self.alpha - 1) * self.kappa_at(n) >= 0:
                raise ScheduleError(
                    f"kappa must satisfy (alpha - 1) * kappa >= 0, got {self.kappa_at(n)}."
                )
            if not 0 < self.gamma_at(n) <= 1:
                raise ScheduleError(f"gamma must lie in (0, 1], got {self.gamma_at(n)}.")

    @staticmethod
    def _at(schedule: Schedule, n: int) -> float:
        return schedule[n] if isinstance(schedule, tuple) else schedule

    def eta_at(self, n: int) -> float:
        return self._at(self.eta, n)

    def kappa_at(self, n: int) -> float:
        return self._at(self.kappa, n)

    def gamma_at(self, n: int) -> float:
        return self._at(self.gamma, n)


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """
    Log-responsibilities of every component at a set of points.
    """

    log_components: npt.NDArray[np.float64]
    """(J, n) array of :math:`\\log k(\\theta_j, y)`."""

    log_mixture: npt.NDArray[np.float64]
    """(n,) array of :math:`\\log \\mu k(y)`."""

    log_phi: npt.NDArray[np.float64]
    """(J, n) array of :math:`\\log \\varphi_j(y)`; ``-inf`` at excluded
    points."""

    excluded: npt.NDArray[np.bool_] = field(repr=False)
    """(n,) mask of points where the target log-density is not finite."""

    @property
    def num_excluded(self) -> int:
        return int(np.count_nonzero(self.excluded))


def log_responsibilities(
    state: MixtureState,
    points: npt.NDArray[np.float64],
    log_p: npt.NDArray[np.float64],
    alpha: float,
    diagnostics: Optional[Diagnostics] = None,
) -> Responsibilities:
    """
    Compute :math:`\\log \\varphi_j(y) = \\log k(\\theta_j, y) + (\\alpha -
    1)(\\log \\mu k(y) - \\log p(y))` for every component at each point.

    Points where ``log_p`` is not finite are excluded (their responsibilities
    are set to ``-inf``) and counted in ``diagnostics``.
    """
    if alpha == 1:
        raise DivergenceDomainError("Responsibilities are not defined for alpha = 1.")
    log_p = np.asarray(log_p, dtype=float).reshape(-1)
    log_components = state.component_log_densities(points)
    log_mixture = logsumexp(np.log(state.weights)[:, None] + log_components, axis=0)
    excluded = ~np.isfinite(log_p)
    safe_log_p = np.where(excluded, 0.0, log_p)
    log_phi = log_components + (alpha - 1) * (log_mixture - safe_log_p)
    log_phi[:, excluded] = -np.inf

    num_excluded = int(np.count_nonzero(excluded))
    if num_excluded:
        logger.debug("Excluded %d point(s) where the target vanishes.", num_excluded)
        if diagnostics is not None:
            diagnostics.excluded_points += num_excluded
    return Responsibilities(log_components, log_mixture, log_phi, excluded)


def log_responsibility(
    state: MixtureState,
    target: "Target",
    y: npt.ArrayLike,
    j: int,
    alpha: float,
) -> float:
    """
    :math:`\\log \\varphi_j(y)` at a single point ``y``. Returns ``-inf``
    where the target density vanishes.
    """
    point = np.asarray(y, dtype=float).reshape(1, state.dimension)
    responsibilities = log_responsibilities(state, point, target.log_p(point), alpha)
    return float(responsibilities.log_phi[j, 0])


def eval_log_mixture(state: MixtureState, y: npt.ArrayLike) -> float:
    """
    :math:`\\log \\sum_j \\lambda_j k(\\theta_j, y)` at a single point.
    """
    point = np.asarray(y, dtype=float).reshape(1, state.dimension)
    return float(state.log_density(point)[0])


def _normalise_log_weights(
    log_weights: npt.NDArray[np.float64],
    diagnostics: Optional[Diagnostics],
) -> npt.NDArray[np.float64]:
    weights = np.exp(log_weights - logsumexp(log_weights))
    floored = weights < WEIGHT_FLOOR
    if np.any(floored):
        count = int(np.count_nonzero(floored))
        logger.debug("Raised %d weight(s) to the floor %g.", count, WEIGHT_FLOOR)
        if diagnostics is not None:
            diagnostics.floored_weights += count
        weights = np.maximum(weights, WEIGHT_FLOOR)
    return weights / np.sum(weights)  # type: ignore[no-any-return]


def _log_brackets(brackets: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    for j, bracket in enumerate(brackets):
        if not (np.isfinite(bracket) and bracket > 0):
            raise WeightUpdateError(j, float(bracket))
    return np.log(brackets)


def update_weights(
    weights: npt.ArrayLike,
    integrals: npt.ArrayLike,
    eta: float,
    kappa: float,
    alpha: float,
    diagnostics: Optional[Diagnostics] = None,
) -> npt.NDArray[np.float64]:
    """
    The monotonic weight update
    :math:`\\lambda_j' \\propto \\lambda_j [I_j + (\\alpha - 1)\\kappa]^\\eta`.

    Parameters
    ==========
    weights : array
        Current weights.
    integrals : array
        :math:`I_j`, (estimates of) the integrals of the responsibilities.
        Only their ratios matter when ``kappa`` is zero.
    eta : float
        In [0, 1]. Zero returns the weights unchanged.
    kappa : float
    alpha : float
    diagnostics : :py:class:`Diagnostics`, optional
        Incremented when weights are raised to :py:data:`WEIGHT_FLOOR`.

    >>> update_weights([0.5, 0.5], [1.0, 4.0], eta=1.0, kappa=0.0, alpha=0.5)
    array([0.2, 0.8])
    """
    weights = _as_weights(weights)
    integrals = np.asarray(integrals, dtype=float).reshape(-1)
    if len(integrals) != len(weights):
        raise MixtureInvariantError("Need exactly one integral per component.")
    if not 0 <= eta <= 1:
        raise ScheduleError(f"eta must lie in [0, 1], got {eta}.")
    if eta == 0:
        return weights
    log_brackets = _log_brackets(integrals + (alpha - 1) * kappa)
    return _normalise_log_weights(np.log(weights) + eta * log_brackets, diagnostics)


def b_from_integrals(integrals: npt.ArrayLike, alpha: float) -> npt.NDArray[np.float64]:
    """
    Convert responsibility integrals into Power Descent values
    :math:`b_j = (I_j - 1) / (\\alpha - 1)`.
    """
    if alpha == 1:
        raise DivergenceDomainError("Power Descent is not defined for alpha = 1.")
    return (np.asarray(integrals, dtype=float) - 1) / (alpha - 1)


def power_descent_eta_range(alpha: float) -> tuple[float, float]:
    """
    The interval ``(0, upper]`` of learning rates for which the Power Descent
    transition cannot increase the objective, returned as ``(0, upper)``.
    """
    if alpha == 1:
        raise DivergenceDomainError("Power Descent is not defined for alpha = 1.")
    if alpha <= -1:
        return (0.0, (alpha - 1) / alpha)
    elif alpha < 0:
        return (0.0, 1 - alpha)
    else:
        return (0.0, 1.0)


def power_descent_step(
    weights: npt.ArrayLike,
    b_values: npt.ArrayLike,
    eta_pd: float,
    kappa: float,
    alpha: float,
    diagnostics: Optional[Diagnostics] = None,
) -> npt.NDArray[np.float64]:
    """
    The Power Descent transition
    :math:`\\lambda_j' \\propto \\lambda_j [(\\alpha - 1)(b_j + \\kappa) +
    1]^{\\eta / (1 - \\alpha)}`.

    A :py:exc:`RuntimeWarning` is issued when ``eta_pd`` lies outside the
    range given by :py:func:`power_descent_eta_range`, where monotonicity is
    no longer guaranteed.
    """
    weights = _as_weights(weights)
    b_values = np.asarray(b_values, dtype=float).reshape(-1)
    if len(b_values) != len(weights):
        raise MixtureInvariantError("Need exactly one b value per component.")
    lower, upper = power_descent_eta_range(alpha)
    if not lower < eta_pd <= upper:
        warnings.warn(
            f"Power Descent learning rate {eta_pd} lies outside ({lower}, {upper}] "
            f"for alpha = {alpha}; the objective may increase.",
            RuntimeWarning,
        )
    if not (alpha - 1) * kappa >= 0:
        raise ScheduleError(f"kappa must satisfy (alpha - 1) * kappa >= 0, got {kappa}.")
    log_brackets = _log_brackets((alpha - 1) * (b_values + kappa) + 1)
    return _normalise_log_weights(
        np.log(weights) + (eta_pd / (1 - alpha)) * log_brackets, diagnostics
    )
