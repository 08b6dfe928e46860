r"""
Component parameter updates for mixtures.

Two rules are provided for Gaussian mixtures:

* :py:func:`mg_update`, the maximisation approach: every component is moved
  towards the moments of its normalised responsibility
  :math:`\hat\varphi_j` by the closed-form exponential family update.
* :py:func:`rgd_update_means`, a gradient step on the component means only,
  equivalent to a Rényi divergence gradient step with learning rate
  :math:`\sigma^2(1-\alpha)\gamma` when the covariances are :math:`\sigma^2
  I`.

Student's t mixtures are updated with :py:func:`student_update`, which
applies the maximisation approach on the joint density of :math:`y` and the
latent Gamma scale :math:`z`, integrating :math:`z` out in closed form.

When a maximisation-approach step would produce a covariance which is not
positive definite, the step size is halved (up to :py:data:`MAX_HALVINGS`
times) before the component is left unchanged for the iteration.

.. autofunction:: mg_update

.. autofunction:: rgd_update_means

.. autofunction:: student_update

.. autofunction:: student_mixture_update
"""

from typing import Callable, Optional, Sequence, TypeVar, Union

import logging

import numpy as np
import numpy.typing as npt

from scipy.special import digamma

from alpha_mixture.expfam import (
    GaussianParams,
    ImageError,
    MomentEstimate,
    ParameterDomainError,
    diagonal_gaussian_family,
    fixed_covariance_family,
    gaussian_update,
    solve_argmax_update,
    ensure_positive_definite,
)

from alpha_mixture.mixture import (
    Diagnostics,
    Family,
    MixtureInvariantError,
    MixtureState,
)

from alpha_mixture.sampling import WeightedStats

from alpha_mixture.student import StudentAux, StudentTParams, dof_from_statistic


__all__ = [
    "MAX_HALVINGS",
    "mg_update",
    "rgd_update_means",
    "student_update",
    "student_mixture_update",
]


logger = logging.getLogger(__name__)


MAX_HALVINGS = 20

GammaSchedule = Union[float, Sequence[float]]

T = TypeVar("T", GaussianParams, StudentTParams)


def _per_component(gamma: GammaSchedule, num_components: int) -> list[float]:
    if isinstance(gamma, (int, float)):
        return [float(gamma)] * num_components
    gammas = [float(g) for g in gamma]
    if len(gammas) != num_components:
        raise MixtureInvariantError(
            f"Got {len(gammas)} step sizes for {num_components} components."
        )
    return gammas


def _with_halving(
    update: Callable[[float], T],
    current: T,
    gamma: float,
    j: int,
    diagnostics: Optional[Diagnostics],
) -> T:
    for attempt in range(MAX_HALVINGS + 1):
        try:
            return update(gamma)
        except ImageError:
            if attempt == MAX_HALVINGS:
                break
            gamma /= 2
            if diagnostics is not None:
                diagnostics.gamma_halvings += 1
    logger.warning(
        "Component %d left unchanged: no positive definite update after %d halvings.",
        j,
        MAX_HALVINGS,
    )
    if diagnostics is not None:
        diagnostics.frozen_components += 1
    return current


def _gaussian_rule(
    family: Family, params: GaussianParams, moments: MomentEstimate
) -> Callable[[float], GaussianParams]:
    if family == Family.GAUSSIAN_FULL:
        return lambda gamma: gaussian_update(params, moments, gamma)

    if family == Family.GAUSSIAN_DIAGONAL:
        spec = diagonal_gaussian_family(params.dimension)
    else:
        spec = fixed_covariance_family(params.covariance)
    zeta = spec.upsilon(params)
    stat_hat = spec.statistic_from_moments(moments.mean, moments.covariance)
    return lambda gamma: spec.upsilon_inverse(
        solve_argmax_update(spec, zeta, stat_hat, gamma)
    )


def mg_update(
    state: MixtureState,
    moments: Sequence[Optional[MomentEstimate]],
    gamma: GammaSchedule,
    diagnostics: Optional[Diagnostics] = None,
) -> tuple[GaussianParams, ...]:
    """
    Maximisation-approach update of every component of a Gaussian mixture.

    Parameters
    ==========
    state : :py:class:`~alpha_mixture.mixture.MixtureState`
        A Gaussian mixture (full, diagonal or fixed-covariance).
    moments : [:py:class:`~alpha_mixture.expfam.MomentEstimate` or None, ...]
        Moments of each component's normalised responsibility. Components
        given None are left unchanged.
    gamma : float or [float, ...]
        A common step size or one per component, each in (0, 1].
    diagnostics : :py:class:`~alpha_mixture.mixture.Diagnostics`, optional
        Counts step-size halvings and frozen components.

    Returns
    =======
    (:py:class:`~alpha_mixture.expfam.GaussianParams`, ...)
    """
    if not state.family.is_gaussian:
        raise MixtureInvariantError("mg_update requires a Gaussian mixture.")
    if len(moments) != state.num_components:
        raise MixtureInvariantError("Need one moment estimate per component.")
    gammas = _per_component(gamma, state.num_components)

    updated = []
    for j, (component, estimate, gamma_j) in enumerate(
        zip(state.components, moments, gammas)
    ):
        assert isinstance(component, GaussianParams)
        if not 0 < gamma_j <= 1:
            raise ParameterDomainError(f"gamma must lie in (0, 1], got {gamma_j}.")
        if estimate is None:
            updated.append(component)
            continue
        rule = _gaussian_rule(state.family, component, estimate)
        updated.append(_with_halving(rule, component, gamma_j, j, diagnostics))
    return tuple(updated)


def rgd_update_means(
    state: MixtureState,
    moments: Sequence[Optional[MomentEstimate]],
    gamma: float,
    alpha: float,
    diagnostics: Optional[Diagnostics] = None,
) -> npt.NDArray[np.float64]:
    """
    Gradient update of the component means:

    .. math::

        m_j \\leftarrow m_j + \\gamma \\frac{\\lambda_j I_j (\\hat m_j - m_j)}
                                          {\\sum_\\ell \\lambda_\\ell I_\\ell}

    where :math:`I_j` and :math:`\\hat m_j` are the mass and mean of each
    ``moments`` entry. The denominator is :math:`\\int (\\mu k)^\\alpha
    p^{1-\\alpha}`, so only the ratios of the masses matter. Covariances (and
    degrees of freedom) are not changed.

    Returns
    =======
    array
        (J, d) updated means. When the denominator vanishes the current means
        are returned and the skip is counted in ``diagnostics``.
    """
    if not alpha < 1:
        raise ParameterDomainError(f"alpha must be below 1, got {alpha}.")
    if not 0 <= gamma <= 1:
        raise ParameterDomainError(f"gamma must lie in [0, 1], got {gamma}.")
    if len(moments) != state.num_components:
        raise MixtureInvariantError("Need one moment estimate per component.")
    means = state.means.copy()
    masses = np.array([0.0 if m is None else m.mass for m in moments])
    denominator = float(state.weights @ masses)
    if not (np.isfinite(denominator) and denominator > 0):
        logger.debug("Skipped mean update: responsibility masses vanish.")
        if diagnostics is not None:
            diagnostics.skipped_mean_updates += 1
        return means
    for j, estimate in enumerate(moments):
        if estimate is None:
            continue
        rate = gamma * state.weights[j] * estimate.mass / denominator
        means[j] = means[j] + rate * (estimate.mean - means[j])
    return means


def student_update(
    params: StudentTParams,
    points: npt.NDArray[np.float64],
    log_weights: npt.NDArray[np.float64],
    gamma: float,
) -> StudentTParams:
    """
    Maximisation-approach update of one Student's t component.

    Parameters
    ==========
    params : :py:class:`~alpha_mixture.student.StudentTParams`
    points : array
        (n, d) points at which the normalised responsibility
        :math:`\\hat\\varphi` is represented.
    log_weights : array
        (n,) log self-normalised weights of the points under
        :math:`\\hat\\varphi` (samples or quadrature nodes).
    gamma : float
        In (0, 1].

    Notes
    =====
    With :math:`w(y) = E[z \\mid y]`, :math:`\\ell(y) = E[\\log z \\mid y]`
    (both under the current parameters) and :math:`\\bar Z = E_{\\hat
    \\varphi}[w]`:

    .. math::

        m' &= \\frac{\\gamma E_{\\hat\\varphi}[w Y] + (1 - \\gamma) m}
                   {\\gamma \\bar Z + 1 - \\gamma} \\\\
        \\Sigma' &= \\gamma E_{\\hat\\varphi}[w (Y - m')(Y - m')^T]
            + (1 - \\gamma)\\left[\\Sigma + (m - m')(m - m')^T\\right]

    and the degrees of freedom are set by
    :py:func:`~alpha_mixture.student.dof_from_statistic` applied to
    :math:`\\gamma E_{\\hat\\varphi}[w - \\ell] + (1 - \\gamma)(1 + \\log(a/2)
    - \\psi(a/2))`.
    """
    if not 0 < gamma <= 1:
        raise ParameterDomainError(f"gamma must lie in (0, 1], got {gamma}.")
    points = np.asarray(points, dtype=float).reshape(-1, params.dimension)
    weights = np.exp(np.asarray(log_weights, dtype=float))
    aux = StudentAux.at(params, points)
    z_mean = aux.z_mean

    z_bar = float(weights @ z_mean)
    mean = (gamma * (weights * z_mean) @ points + (1 - gamma) * params.mean) / (
        gamma * z_bar + 1 - gamma
    )
    centred = points - mean
    scatter = ((weights * z_mean)[:, None] * centred).T @ centred
    shift = params.mean - mean
    scale = ensure_positive_definite(
        gamma * scatter + (1 - gamma) * (params.scale + np.outer(shift, shift))
    )

    half_a = params.dof / 2
    prior_statistic = 1 + np.log(half_a) - digamma(half_a)
    statistic = gamma * float(weights @ (z_mean - aux.log_z_mean)) + (1 - gamma) * float(
        prior_statistic
    )
    return StudentTParams(mean, scale, dof_from_statistic(statistic))


def student_mixture_update(
    state: MixtureState,
    stats: WeightedStats,
    gamma: GammaSchedule,
    diagnostics: Optional[Diagnostics] = None,
) -> tuple[StudentTParams, ...]:
    """
    Apply :py:func:`student_update` to every available component of a
    Student's t mixture, halving the step size when the scale matrix loses
    positive definiteness.
    """
    if state.family != Family.STUDENT_T:
        raise MixtureInvariantError("student_mixture_update requires a Student's t mixture.")
    gammas = _per_component(gamma, state.num_components)
    updated: list[StudentTParams] = []
    for j, (component, gamma_j) in enumerate(zip(state.components, gammas)):
        assert isinstance(component, StudentTParams)
        if not stats.available[j]:
            updated.append(component)
            continue

        def rule(g: float, component: StudentTParams = component, j: int = j) -> StudentTParams:
            return student_update(component, stats.points, stats.log_weights[j], g)

        updated.append(_with_halving(rule, component, gamma_j, j, diagnostics))
    return tuple(updated)
