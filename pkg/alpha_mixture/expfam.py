r"""
Exponential families and the maximisation-approach parameter update.

An exponential family has densities

.. math::

    k(\zeta, y) = h(y) \exp(\langle \zeta, S(y) \rangle - A(\zeta))

with sufficient statistic :math:`S`, log-partition :math:`A` and canonical
parameters :math:`\zeta`. Canonical parameters and elements of the statistic
space are represented as flat :py:mod:`numpy` vectors (matrix-valued parts
are flattened row-major).

The family abstraction is captured by :py:class:`ExpFamilySpec`. Three
Gaussian instances are provided:

.. autofunction:: full_gaussian_family

.. autofunction:: diagonal_gaussian_family

.. autofunction:: fixed_covariance_family

Data types
==========

.. autoclass:: ExpFamilySpec
    :members:

.. autoclass:: GaussianParams
    :members:

.. autoclass:: MomentEstimate
    :members:

Maximisation approach
=====================

The update of a single component solves :math:`\nabla A(\zeta^*) = \gamma
\hat s + (1 - \gamma) \nabla A(\zeta)` where :math:`\hat s` is the
(normalised) responsibility-weighted mean of :math:`S`. The step size
:math:`\gamma` relates to the regularisation weight :math:`b` used in the
monotonicity analysis through :math:`\gamma = I / (I + b)`, see
:py:func:`gamma_from_b`.

.. autofunction:: solve_argmax_update

.. autofunction:: gaussian_update

.. autofunction:: ensure_positive_definite

.. autofunction:: gamma_from_b

.. autofunction:: b_from_gamma

Gradient approach
=================

For Gaussians with a fixed covariance the surrogate objective has a globally
constant smoothness index so plain gradient steps are guaranteed not to
increase it.

.. autofunction:: g_canonical

.. autofunction:: grad_g_canonical

.. autofunction:: gradient_step_canonical

.. autofunction:: gradient_step_noncanonical

Exceptions
==========

.. autoexception:: ExpFamilyError

.. autoexception:: ParameterDomainError

.. autoexception:: ImageError

.. autoexception:: InvalidParametersError
"""

from typing import Callable, Optional

from dataclasses import dataclass

from functools import cached_property

import logging

import numpy as np
import numpy.typing as npt

from scipy.linalg import LinAlgError, cholesky, solve_triangular


__all__ = [
    "Vector",
    "ExpFamilySpec",
    "GaussianParams",
    "MomentEstimate",
    "full_gaussian_family",
    "diagonal_gaussian_family",
    "fixed_covariance_family",
    "log_density",
    "solve_argmax_update",
    "gaussian_update",
    "ensure_positive_definite",
    "gamma_from_b",
    "b_from_gamma",
    "g_canonical",
    "grad_g_canonical",
    "gradient_step_canonical",
    "gradient_step_noncanonical",
    "ExpFamilyError",
    "ParameterDomainError",
    "ImageError",
    "InvalidParametersError",
]


logger = logging.getLogger(__name__)


Vector = npt.NDArray[np.float64]

LOG_2PI = float(np.log(2 * np.pi))

JITTER = 1e-9
"""Relative jitter added to the diagonal of a covariance failing Cholesky."""


class ExpFamilyError(ValueError):
    """Base class for exponential family errors."""


class ParameterDomainError(ExpFamilyError):
    """
    Thrown when canonical parameters (or a step size) lie outside their
    domain.
    """


class ImageError(ExpFamilyError):
    """
    Thrown when a target statistic does not lie in the image of the gradient
    of the log-partition function (e.g. it implies a covariance which is not
    positive definite). Callers respond by shrinking the step size.
    """


class InvalidParametersError(ExpFamilyError):
    """Thrown when user parameters violate their invariants."""


def _cholesky(matrix: npt.NDArray[np.float64]) -> Optional[npt.NDArray[np.float64]]:
    """Lower Cholesky factor or None if the matrix is not positive definite."""
    if not np.all(np.isfinite(matrix)):
        return None
    try:
        return cholesky(matrix, lower=True)  # type: ignore[no-any-return]
    except LinAlgError:
        return None


def ensure_positive_definite(
    covariance: npt.NDArray[np.float64],
) -> npt.NDArray[np.float64]:
    """
    Symmetrise a covariance matrix and verify it is positive definite.

    If the Cholesky factorisation fails, a jitter of ``1e-9 * trace / d`` is
    added to the diagonal once. If it still fails, :py:exc:`ImageError` is
    raised.
    """
    covariance = (covariance + covariance.T) / 2
    if _cholesky(covariance) is not None:
        return covariance
    d = covariance.shape[0]
    jitter = JITTER * abs(float(np.trace(covariance))) / d
    jittered = covariance + jitter * np.eye(d)
    if jitter > 0 and _cholesky(jittered) is not None:
        logger.debug("Covariance needed jitter %g to be positive definite.", jitter)
        return jittered
    raise ImageError("Updated covariance is not positive definite.")


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """
    A multivariate normal distribution.
    """

    mean: Vector
    covariance: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(-1)
        covariance = np.array(self.covariance, dtype=float).reshape(len(mean), len(mean))
        if not np.all(np.isfinite(mean)):
            raise InvalidParametersError("Gaussian mean must be finite.")
        scale = max(1.0, float(np.max(np.abs(covariance))))
        if not np.allclose(covariance, covariance.T, rtol=0, atol=1e-12 * scale):
            raise InvalidParametersError("Gaussian covariance must be symmetric.")
        if _cholesky(covariance) is None:
            raise InvalidParametersError("Gaussian covariance must be positive definite.")
        mean.setflags(write=False)
        covariance.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dimension(self) -> int:
        return len(self.mean)

    @cached_property
    def cholesky_factor(self) -> npt.NDArray[np.float64]:
        """Lower-triangular Cholesky factor of the covariance."""
        factor = _cholesky(self.covariance)
        assert factor is not None
        return factor

    @cached_property
    def log_det_covariance(self) -> float:
        return 2 * float(np.sum(np.log(np.diag(self.cholesky_factor))))

    def mahalanobis_sq(self, points: npt.NDArray[np.float64]) -> Vector:
        """Squared Mahalanobis distance of each of an (n, d) array of points."""
        centred = np.asarray(points, dtype=float).reshape(-1, self.dimension) - self.mean
        z = solve_triangular(self.cholesky_factor, centred.T, lower=True)
        return np.sum(z**2, axis=0)  # type: ignore[no-any-return]

    def log_density(self, points: npt.NDArray[np.float64]) -> Vector:
        """Log-density at each of an (n, d) array of points."""
        return -0.5 * (
            self.mahalanobis_sq(points)
            + self.dimension * LOG_2PI
            + self.log_det_covariance
        )

    def transform(self, normals: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """Map an (n, d) array of standard normal draws to draws from this
        distribution."""
        return self.mean + normals @ self.cholesky_factor.T

    def with_mean(self, mean: Vector) -> "GaussianParams":
        return GaussianParams(mean, self.covariance)


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    """
    Estimated moments of a normalised responsibility :math:`\\hat\\varphi`.
    """

    mass: float
    """Estimate of the (unnormalised) responsibility's integral."""

    mean: Vector
    """Estimate of :math:`\\int y \\hat\\varphi(y) dy`."""

    covariance: npt.NDArray[np.float64]
    """Estimated covariance under :math:`\\hat\\varphi`."""

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(-1)
        covariance = np.array(self.covariance, dtype=float).reshape(len(mean), len(mean))
        if not self.mass >= 0:
            raise InvalidParametersError(f"Moment mass must be nonnegative, got {self.mass}.")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", (covariance + covariance.T) / 2)


@dataclass(frozen=True)
class ExpFamilySpec:
    """
    Description of an exponential family over :math:`\\mathbb{R}^d`.

    All functions operating on points accept an (n, d) array and return one
    value (or row) per point.
    """

    name: str
    dimension: int
    dim_param: int

    sufficient_stat: Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]]
    """Maps (n, d) points to an (n, dim_param) array of statistics."""

    log_partition: Callable[[Vector], float]
    """:math:`A`; raises :py:exc:`ParameterDomainError` outside the domain."""

    grad_log_partition: Callable[[Vector], Vector]
    """:math:`\\nabla A`; raises :py:exc:`ParameterDomainError` outside the
    domain."""

    grad_log_partition_inverse: Callable[[Vector], Vector]
    """:math:`(\\nabla A)^{-1}`; raises :py:exc:`ImageError` outside the
    image."""

    upsilon: Callable[[GaussianParams], Vector]
    """Map from user parameters to canonical parameters."""

    upsilon_inverse: Callable[[Vector], GaussianParams]

    base_log_h: Callable[[npt.NDArray[np.float64]], Vector]

    statistic_from_moments: Callable[[Vector, npt.NDArray[np.float64]], Vector]
    """Expected statistic of any distribution with the given mean and
    covariance."""


def log_density(
    spec: ExpFamilySpec, zeta: Vector, points: npt.NDArray[np.float64]
) -> Vector:
    """Evaluate :math:`\\log k(\\zeta, y)` at each of an (n, d) array of points."""
    points = np.asarray(points, dtype=float).reshape(-1, spec.dimension)
    return (
        spec.base_log_h(points)
        + spec.sufficient_stat(points) @ zeta
        - spec.log_partition(zeta)
    )


def _split_full(zeta: Vector, d: int) -> tuple[Vector, npt.NDArray[np.float64]]:
    eta1 = zeta[:d]
    eta2 = zeta[d:].reshape(d, d)
    return eta1, (eta2 + eta2.T) / 2


def full_gaussian_family(dimension: int) -> ExpFamilySpec:
    """
    Gaussians with unrestricted mean and covariance.

    :math:`S(y) = (y, y y^T)` and :math:`\\zeta = (\\Sigma^{-1} m,
    -\\frac{1}{2}\\Sigma^{-1})`.
    """
    d = dimension

    def sufficient_stat(points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        points = points.reshape(-1, d)
        outer = np.einsum("ni,nj->nij", points, points).reshape(len(points), d * d)
        return np.concatenate([points, outer], axis=1)

    def precision_factor(
        zeta: Vector,
    ) -> tuple[Vector, npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        eta1, eta2 = _split_full(zeta, d)
        precision = -2 * eta2
        factor = _cholesky(precision)
        if factor is None:
            raise ParameterDomainError("-2 * eta2 must be positive definite.")
        return eta1, precision, factor

    def log_partition(zeta: Vector) -> float:
        eta1, precision, factor = precision_factor(zeta)
        z = solve_triangular(factor, eta1, lower=True)
        log_det_precision = 2 * float(np.sum(np.log(np.diag(factor))))
        return 0.5 * float(z @ z) - 0.5 * log_det_precision

    def grad_log_partition(zeta: Vector) -> Vector:
        eta1, precision, _factor = precision_factor(zeta)
        covariance = np.linalg.inv(precision)
        mean = covariance @ eta1
        return np.concatenate([mean, (covariance + np.outer(mean, mean)).reshape(-1)])

    def grad_log_partition_inverse(stat: Vector) -> Vector:
        mean = stat[:d]
        second = stat[d:].reshape(d, d)
        covariance = (second + second.T) / 2 - np.outer(mean, mean)
        if _cholesky(covariance) is None:
            raise ImageError("Statistic implies a covariance which is not positive definite.")
        return upsilon(GaussianParams(mean, covariance))

    def upsilon(params: GaussianParams) -> Vector:
        precision = np.linalg.inv(params.covariance)
        precision = (precision + precision.T) / 2
        return np.concatenate([precision @ params.mean, (-0.5 * precision).reshape(-1)])

    def upsilon_inverse(zeta: Vector) -> GaussianParams:
        eta1, precision, _factor = precision_factor(zeta)
        covariance = np.linalg.inv(precision)
        covariance = (covariance + covariance.T) / 2
        return GaussianParams(covariance @ eta1, covariance)

    def base_log_h(points: npt.NDArray[np.float64]) -> Vector:
        return np.full(len(points.reshape(-1, d)), -0.5 * d * LOG_2PI)

    def statistic_from_moments(mean: Vector, covariance: npt.NDArray[np.float64]) -> Vector:
        return np.concatenate([mean, (covariance + np.outer(mean, mean)).reshape(-1)])

    return ExpFamilySpec(
        name="gaussian-full",
        dimension=d,
        dim_param=d + d * d,
        sufficient_stat=sufficient_stat,
        log_partition=log_partition,
        grad_log_partition=grad_log_partition,
        grad_log_partition_inverse=grad_log_partition_inverse,
        upsilon=upsilon,
        upsilon_inverse=upsilon_inverse,
        base_log_h=base_log_h,
        statistic_from_moments=statistic_from_moments,
    )


def diagonal_gaussian_family(dimension: int) -> ExpFamilySpec:
    """
    Gaussians with a diagonal covariance (the mean-field family).

    :math:`S(y) = (y, y^2)` (elementwise) and :math:`\\zeta = (m / \\sigma^2,
    -1 / (2\\sigma^2))`. The log-partition is a sum over coordinates so the
    maximisation-approach update factorises coordinate-wise.
    """
    d = dimension

    def sufficient_stat(points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        points = points.reshape(-1, d)
        return np.concatenate([points, points**2], axis=1)

    def split(zeta: Vector) -> tuple[Vector, Vector]:
        eta1, eta2 = zeta[:d], zeta[d:]
        if not np.all(eta2 < 0):
            raise ParameterDomainError("Diagonal Gaussian eta2 must be negative.")
        return eta1, eta2

    def log_partition(zeta: Vector) -> float:
        eta1, eta2 = split(zeta)
        return float(np.sum(-(eta1**2) / (4 * eta2) - 0.5 * np.log(-2 * eta2)))

    def grad_log_partition(zeta: Vector) -> Vector:
        eta1, eta2 = split(zeta)
        variance = -0.5 / eta2
        mean = eta1 * variance
        return np.concatenate([mean, variance + mean**2])

    def grad_log_partition_inverse(stat: Vector) -> Vector:
        mean = stat[:d]
        variance = stat[d:] - mean**2
        if not np.all(variance > 0):
            raise ImageError("Statistic implies a nonpositive variance.")
        return np.concatenate([mean / variance, -0.5 / variance])

    def upsilon(params: GaussianParams) -> Vector:
        variance = np.diag(params.covariance)
        return np.concatenate([params.mean / variance, -0.5 / variance])

    def upsilon_inverse(zeta: Vector) -> GaussianParams:
        eta1, eta2 = split(zeta)
        variance = -0.5 / eta2
        return GaussianParams(eta1 * variance, np.diag(variance))

    def base_log_h(points: npt.NDArray[np.float64]) -> Vector:
        return np.full(len(points.reshape(-1, d)), -0.5 * d * LOG_2PI)

    def statistic_from_moments(mean: Vector, covariance: npt.NDArray[np.float64]) -> Vector:
        return np.concatenate([mean, np.diag(covariance) + mean**2])

    return ExpFamilySpec(
        name="gaussian-diagonal",
        dimension=d,
        dim_param=2 * d,
        sufficient_stat=sufficient_stat,
        log_partition=log_partition,
        grad_log_partition=grad_log_partition,
        grad_log_partition_inverse=grad_log_partition_inverse,
        upsilon=upsilon,
        upsilon_inverse=upsilon_inverse,
        base_log_h=base_log_h,
        statistic_from_moments=statistic_from_moments,
    )


def fixed_covariance_family(covariance: npt.NDArray[np.float64]) -> ExpFamilySpec:
    """
    Gaussians with a known covariance :math:`\\Sigma`; only the mean varies.

    :math:`S(y) = y`, :math:`\\zeta = \\Sigma^{-1} m` and :math:`A(\\zeta) =
    \\frac{1}{2} \\zeta^T \\Sigma \\zeta`.
    """
    covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
    fixed = GaussianParams(np.zeros(len(covariance)), covariance)
    d = fixed.dimension
    sigma = fixed.covariance
    precision = np.linalg.inv(sigma)

    def sufficient_stat(points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        return points.reshape(-1, d)

    def log_partition(zeta: Vector) -> float:
        return 0.5 * float(zeta @ sigma @ zeta)

    def grad_log_partition(zeta: Vector) -> Vector:
        return sigma @ zeta  # type: ignore[no-any-return]

    def grad_log_partition_inverse(stat: Vector) -> Vector:
        return np.linalg.solve(sigma, stat)

    def upsilon(params: GaussianParams) -> Vector:
        return np.linalg.solve(sigma, params.mean)

    def upsilon_inverse(zeta: Vector) -> GaussianParams:
        return GaussianParams(sigma @ zeta, sigma)

    def base_log_h(points: npt.NDArray[np.float64]) -> Vector:
        return -0.5 * (fixed.mahalanobis_sq(points) + d * LOG_2PI + fixed.log_det_covariance)

    def statistic_from_moments(mean: Vector, covariance: npt.NDArray[np.float64]) -> Vector:
        return np.asarray(mean, dtype=float)

    return ExpFamilySpec(
        name="gaussian-fixed-covariance",
        dimension=d,
        dim_param=d,
        sufficient_stat=sufficient_stat,
        log_partition=log_partition,
        grad_log_partition=grad_log_partition,
        grad_log_partition_inverse=grad_log_partition_inverse,
        upsilon=upsilon,
        upsilon_inverse=upsilon_inverse,
        base_log_h=base_log_h,
        statistic_from_moments=statistic_from_moments,
    )


def _check_gamma(gamma: float) -> None:
    if not 0 < gamma <= 1:
        raise ParameterDomainError(f"gamma must lie in (0, 1], got {gamma}.")


def gamma_from_b(mass: float, b: float) -> float:
    """Step size equivalent to the regularisation weight ``b``."""
    return mass / (mass + b)


def b_from_gamma(mass: float, gamma: float) -> float:
    """Regularisation weight equivalent to the step size ``gamma``."""
    _check_gamma(gamma)
    return mass * (1 - gamma) / gamma


def solve_argmax_update(
    spec: ExpFamilySpec,
    current: Vector,
    stat_hat: Vector,
    gamma: float,
) -> Vector:
    """
    Solve :math:`\\nabla A(\\zeta^*) = \\gamma \\hat s + (1 - \\gamma) \\nabla
    A(\\zeta)` for :math:`\\zeta^*`.

    Parameters
    ==========
    spec : ExpFamilySpec
    current : vector
        Current canonical parameters :math:`\\zeta`.
    stat_hat : vector
        Mean statistic :math:`\\hat s` of the normalised responsibility.
    gamma : float
        In (0, 1].

    Raises
    ======
    ImageError
        If the combined statistic lies outside the image of :math:`\\nabla
        A`. A smaller ``gamma`` always succeeds eventually.
    """
    _check_gamma(gamma)
    stat_hat = np.asarray(stat_hat, dtype=float)
    if not np.all(np.isfinite(stat_hat)):
        raise ParameterDomainError("Statistic estimate must be finite.")
    target_stat = gamma * stat_hat + (1 - gamma) * spec.grad_log_partition(current)
    return spec.grad_log_partition_inverse(target_stat)


def gaussian_update(
    params: GaussianParams,
    moments: MomentEstimate,
    gamma: float,
) -> GaussianParams:
    """
    The closed-form maximisation-approach update of a full-covariance
    Gaussian:

    .. math::

        m' &= (1 - \\gamma) m + \\gamma \\hat m \\\\
        \\Sigma' &= \\gamma \\hat\\Sigma + (1 - \\gamma) \\Sigma
            + \\gamma (1 - \\gamma) (\\hat m - m)(\\hat m - m)^T

    The result is symmetrised and checked with
    :py:func:`ensure_positive_definite`.

    >>> new = gaussian_update(
    ...     GaussianParams([0.0], [[1.0]]),
    ...     MomentEstimate(1.0, [2.0], [[3.0]]),
    ...     0.5,
    ... )
    >>> float(new.mean[0]), float(new.covariance[0, 0])
    (1.0, 3.0)
    """
    _check_gamma(gamma)
    delta = moments.mean - params.mean
    mean = (1 - gamma) * params.mean + gamma * moments.mean
    covariance = (
        gamma * moments.covariance
        + (1 - gamma) * params.covariance
        + gamma * (1 - gamma) * np.outer(delta, delta)
    )
    return GaussianParams(mean, ensure_positive_definite(covariance))


def g_canonical(
    spec: ExpFamilySpec,
    zeta: Vector,
    zeta_ref: Vector,
    stat_hat: Vector,
) -> float:
    """
    The surrogate :math:`g(\\zeta) = -\\int \\hat\\varphi \\log(k(\\zeta,
    \\cdot) / k(\\zeta_0, \\cdot))` for a normalised responsibility with mean
    statistic ``stat_hat``, relative to reference parameters ``zeta_ref``.
    """
    return (
        spec.log_partition(zeta)
        - spec.log_partition(zeta_ref)
        - float(np.dot(zeta - zeta_ref, stat_hat))
    )


def grad_g_canonical(spec: ExpFamilySpec, zeta: Vector, stat_hat: Vector) -> Vector:
    """Gradient of :py:func:`g_canonical`: :math:`\\nabla A(\\zeta) - \\hat s`."""
    return spec.grad_log_partition(zeta) - np.asarray(stat_hat, dtype=float)


def gradient_step_canonical(
    params: GaussianParams, stat_hat: Vector, gamma: float
) -> GaussianParams:
    """
    Fixed-covariance Gaussian gradient step taken in canonical coordinates,
    expressed on the mean: :math:`m \\leftarrow m - (\\gamma / \\beta_0)
    \\Sigma (m - \\hat y)` with :math:`\\beta_0` the largest eigenvalue of
    :math:`\\Sigma`.
    """
    _check_gamma(gamma)
    sigma = params.covariance
    beta = float(np.max(np.linalg.eigvalsh(sigma)))
    step = sigma @ (params.mean - np.asarray(stat_hat, dtype=float))
    return params.with_mean(params.mean - (gamma / beta) * step)


def gradient_step_noncanonical(
    params: GaussianParams, stat_hat: Vector, gamma: float
) -> GaussianParams:
    """
    Fixed-covariance Gaussian gradient step taken directly on the mean:
    :math:`m \\leftarrow m - (\\gamma / \\beta) \\Sigma^{-1} (m - \\hat y)`
    with :math:`\\beta` the largest eigenvalue of :math:`\\Sigma^{-1}`.
    """
    _check_gamma(gamma)
    sigma = params.covariance
    beta = 1.0 / float(np.min(np.linalg.eigvalsh(sigma)))
    step = np.linalg.solve(sigma, params.mean - np.asarray(stat_hat, dtype=float))
    return params.with_mean(params.mean - (gamma / beta) * step)
