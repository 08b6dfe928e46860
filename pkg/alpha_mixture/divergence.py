r"""
The α-divergence objective and the Variational Rényi (VR) bound.

For a variational density :math:`q` and an unnormalised target :math:`p` the
objective is

.. math::

    \Psi_\alpha(q; p) = \int f_\alpha\left(\frac{q(y)}{p(y)}\right) p(y) \, dy

where :math:`f_\alpha` is given by :py:func:`f_alpha`. Because the objective
is defined against an unnormalised target, minimising it does not require the
normalising constant of :math:`p`.

All density ratios are evaluated in log space: in moderate dimensions the
ratios :math:`q/p` routinely under- or overflow double precision.

.. autofunction:: f_alpha

.. autofunction:: psi_alpha_exact

.. autofunction:: vr_bound_mc

.. autofunction:: vr_bound_quadrature

Exceptions
==========

.. autoexception:: DivergenceError

.. autoexception:: DivergenceDomainError

.. autoexception:: QuadratureNormalisationError

.. autoexception:: EmptySampleError

.. autoexception:: NonFiniteInputError
"""

from typing import Callable, Optional, TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from scipy.special import logsumexp

from alpha_mixture.quadrature import QuadratureGrid

if TYPE_CHECKING:
    from alpha_mixture.targets import Target


__all__ = [
    "LogDensity",
    "f_alpha",
    "psi_alpha_exact",
    "vr_bound_mc",
    "vr_bound_quadrature",
    "DivergenceError",
    "DivergenceDomainError",
    "QuadratureNormalisationError",
    "EmptySampleError",
    "NonFiniteInputError",
]


LogDensity = Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]]
"""
A vectorised log-density: maps an (n, d) array of points to an (n,) array of
log-density values (possibly ``-inf``).
"""


class DivergenceError(ValueError):
    """Base class for errors raised while evaluating divergences."""


class DivergenceDomainError(DivergenceError):
    """Thrown when an argument lies outside the domain of the divergence."""


class QuadratureNormalisationError(DivergenceError):
    """
    Thrown when a variational density does not integrate to one on the
    quadrature grid used to evaluate the divergence.
    """


class EmptySampleError(DivergenceError):
    """Thrown when a Monte Carlo estimate is requested from zero samples."""


class NonFiniteInputError(DivergenceError):
    """Thrown when a Monte Carlo estimate is given non-finite inputs."""


def f_alpha(alpha: float, u: float) -> float:
    """
    The convex function generating the α-divergence.

    Returns :math:`-\\log u` when α is 0, :math:`u \\log u` when α is 1 and
    :math:`(u^\\alpha - 1)/(\\alpha(\\alpha - 1))` otherwise.

    >>> f_alpha(0.5, 1.0)
    0.0
    >>> round(f_alpha(0.2, 2.0), 6)
    -0.929365
    """
    if not u > 0:
        raise DivergenceDomainError(f"f_alpha is only defined for u > 0, got {u}.")
    if alpha == 0:
        return float(-np.log(u))
    elif alpha == 1:
        return float(u * np.log(u))
    else:
        return float(np.expm1(alpha * np.log(u)) / (alpha * (alpha - 1)))


def _mixed_log_terms(
    alpha: float,
    log_q: npt.NDArray[np.float64],
    log_p: npt.NDArray[np.float64],
) -> npt.NDArray[np.float64]:
    """
    Pointwise ``alpha * log_q + (1 - alpha) * log_p``, i.e. the log of
    ``q**alpha * p**(1 - alpha)``, taking the value ``-inf`` wherever both
    densities vanish.
    """
    with np.errstate(invalid="ignore"):
        terms = alpha * log_q + (1 - alpha) * log_p
    both_zero = np.isneginf(log_q) & np.isneginf(log_p)
    return np.where(both_zero, -np.inf, terms)


def _kl_terms(
    log_a: npt.NDArray[np.float64],
    log_b: npt.NDArray[np.float64],
    log_weights: npt.NDArray[np.float64],
) -> float:
    """Quadrature of a * log(a / b) over the support of a."""
    support = ~np.isneginf(log_a)
    if np.any(np.isneginf(log_b[support])):
        return float("inf")
    a = np.exp(log_a[support] + log_weights[support])
    return float(np.sum(a * (log_a[support] - log_b[support])))


def psi_alpha_exact(
    alpha: float,
    log_q: LogDensity,
    target: "Target",
    grid: QuadratureGrid,
    *,
    normalisation_tol: float = 1e-6,
) -> float:
    """
    Evaluate :math:`\\Psi_\\alpha(q; p)` by quadrature.

    Parameters
    ==========
    alpha : float
    log_q : LogDensity
        The log of a normalised density. Its integral on ``grid`` is checked
        to lie within ``normalisation_tol`` of one.
    target : :py:class:`~alpha_mixture.targets.Target`
        The (possibly unnormalised) target. Its integral over the grid must
        be positive and finite.
    grid : :py:class:`~alpha_mixture.quadrature.QuadratureGrid`
    normalisation_tol : float

    Returns
    =======
    float
        May be ``inf`` when ``q`` is not absolutely continuous with respect
        to ``p`` (or vice versa for α <= 0).
    """
    lq = np.asarray(log_q(grid.nodes), dtype=float)
    lp = np.asarray(target.log_p(grid.nodes), dtype=float)

    q_mass = np.exp(grid.log_integrate(lq))
    if not abs(q_mass - 1.0) <= normalisation_tol:
        raise QuadratureNormalisationError(
            f"Variational density integrates to {q_mass!r} on the grid "
            f"(tolerance {normalisation_tol})."
        )
    log_p_mass = grid.log_integrate(lp)
    if not np.isfinite(log_p_mass):
        raise DivergenceDomainError(
            "Target must have a positive, finite integral over the grid."
        )

    if alpha == 0:
        return _kl_terms(lp, lq, grid.log_weights)
    elif alpha == 1:
        return _kl_terms(lq, lp, grid.log_weights)
    else:
        log_mixed = grid.log_integrate(_mixed_log_terms(alpha, lq, lp))
        return float((np.exp(log_mixed) - np.exp(log_p_mass)) / (alpha * (alpha - 1)))


def vr_bound_mc(
    alpha: float,
    log_q_values: npt.ArrayLike,
    log_p_values: npt.ArrayLike,
    log_proposal_values: Optional[npt.ArrayLike] = None,
) -> float:
    """
    Monte Carlo estimate of the VR bound

    .. math::

        \\mathcal{L}_\\alpha = \\frac{1}{1-\\alpha}
            \\log \\int q^\\alpha p^{1-\\alpha}

    Parameters
    ==========
    alpha : float
        Any value except 1.
    log_q_values, log_p_values : array
        Log variational density and log target at samples :math:`Y_1,
        \\ldots, Y_M`.
    log_proposal_values : array, optional
        Log density of the distribution the samples were drawn from. Defaults
        to ``log_q_values`` (samples drawn from :math:`q` itself).

    >>> round(vr_bound_mc(0.2, [0.0, 0.0], [0.0, 1.0]), 6)
    0.597442
    """
    if alpha == 1:
        raise DivergenceDomainError("The VR bound is not defined for alpha = 1.")
    lq = np.asarray(log_q_values, dtype=float).reshape(-1)
    lp = np.asarray(log_p_values, dtype=float).reshape(-1)
    if log_proposal_values is None:
        lprop = lq
    else:
        lprop = np.asarray(log_proposal_values, dtype=float).reshape(-1)
    if len(lq) == 0:
        raise EmptySampleError("The VR bound needs at least one sample.")
    if not (len(lq) == len(lp) == len(lprop)):
        raise DivergenceDomainError("Sample arrays must have the same length.")
    for name, values in [("log q", lq), ("log p", lp), ("log proposal", lprop)]:
        if not np.all(np.isfinite(values)):
            raise NonFiniteInputError(f"Non-finite {name} value in VR bound sample.")

    log_ratios = alpha * lq + (1 - alpha) * lp - lprop
    return float((logsumexp(log_ratios) - np.log(len(lq))) / (1 - alpha))


def vr_bound_quadrature(
    alpha: float,
    log_q: LogDensity,
    target: "Target",
    grid: QuadratureGrid,
) -> float:
    """
    Evaluate the VR bound by quadrature (see :py:func:`vr_bound_mc`).
    """
    if alpha == 1:
        raise DivergenceDomainError("The VR bound is not defined for alpha = 1.")
    lq = np.asarray(log_q(grid.nodes), dtype=float)
    lp = np.asarray(target.log_p(grid.nodes), dtype=float)
    return grid.log_integrate(_mixed_log_terms(alpha, lq, lp)) / (1 - alpha)
