r"""
Multivariate Student's t distributions viewed as Gaussian scale mixtures.

A Student's t with location :math:`m`, scale matrix :math:`\Sigma` and
:math:`a` degrees of freedom is the marginal of

.. math::

    z \sim \mathrm{Gamma}(a/2, \text{rate}=a/2), \qquad
    y \mid z \sim \mathcal{N}(m, \Sigma / z)

The latent scale :math:`z` is never sampled: every expectation over it is
available in closed form through :py:func:`g_tau`. Conditionally on
:math:`y`, :math:`z` is Gamma distributed with shape :math:`a/2 + d/2` and
rate :math:`a/2 + q(y)` where :math:`q(y) = \frac{1}{2}(y - m)^T
\Sigma^{-1} (y - m)`.

.. autoclass:: StudentTParams
    :members:

.. autoclass:: StudentAux
    :members:

.. autofunction:: g_tau

.. autofunction:: log_g_tau

.. autofunction:: kappa_fn

.. autofunction:: kappa_inv

.. autofunction:: dof_from_statistic

.. autoexception:: StudentDomainError
"""

from typing import Union

from dataclasses import dataclass

from functools import cached_property

import numpy as np
import numpy.typing as npt

from scipy.optimize import brentq

from scipy.special import digamma, gammaln, polygamma

from alpha_mixture.expfam import GaussianParams, InvalidParametersError


__all__ = [
    "StudentTParams",
    "StudentAux",
    "g_tau",
    "log_g_tau",
    "kappa_fn",
    "kappa_inv",
    "dof_from_statistic",
    "StudentDomainError",
    "MAX_DOF",
]


MAX_DOF = 1e6
"""
Degrees of freedom assigned when the data are indistinguishable from a
Gaussian (the dof stationarity equation has no finite root).
"""


FloatOrArray = Union[float, npt.NDArray[np.float64]]


class StudentDomainError(ValueError):
    """Thrown when Student's t quantities are evaluated outside their domain."""


@dataclass(frozen=True, eq=False)
class StudentTParams:
    """
    Parameters of a multivariate Student's t distribution.
    """

    mean: npt.NDArray[np.float64]
    scale: npt.NDArray[np.float64]
    dof: float

    def __post_init__(self) -> None:
        if not self.dof > 0:
            raise InvalidParametersError(f"Degrees of freedom must be positive, got {self.dof}.")
        # Reuse the Gaussian validation for the location and scale matrix
        gaussian = GaussianParams(self.mean, self.scale)
        object.__setattr__(self, "mean", gaussian.mean)
        object.__setattr__(self, "scale", gaussian.covariance)
        object.__setattr__(self, "dof", float(self.dof))

    @property
    def dimension(self) -> int:
        return len(self.mean)

    @cached_property
    def gaussian(self) -> GaussianParams:
        """The Gaussian :math:`\\mathcal{N}(m, \\Sigma)` obtained at z = 1."""
        return GaussianParams(self.mean, self.scale)

    def quad_form(self, points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """:math:`q(y) = \\frac{1}{2}(y - m)^T \\Sigma^{-1} (y - m)`."""
        return 0.5 * self.gaussian.mahalanobis_sq(points)

    @cached_property
    def _log_normaliser(self) -> float:
        a, d = self.dof, self.dimension
        return float(
            gammaln((a + d) / 2)
            - gammaln(a / 2)
            - (d / 2) * np.log(a * np.pi)
            - 0.5 * self.gaussian.log_det_covariance
        )

    def log_density(self, points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """
        Log-density at each of an (n, d) array of points, using the explicit
        normalising constant :math:`\\Gamma((a+d)/2) / (\\Gamma(a/2)
        (a\\pi)^{d/2} |\\Sigma|^{1/2})`.
        """
        a, d = self.dof, self.dimension
        return self._log_normaliser - ((a + d) / 2) * np.log1p(
            2 * self.quad_form(points) / a
        )

    def transform(
        self,
        normals: npt.NDArray[np.float64],
        scales: npt.NDArray[np.float64],
    ) -> npt.NDArray[np.float64]:
        """
        Map (n, d) standard normal draws and (n,) draws of the latent scale
        :math:`z` to draws from this distribution.
        """
        return self.mean + (normals @ self.gaussian.cholesky_factor.T) / np.sqrt(
            scales
        )[:, None]

    def with_mean(self, mean: npt.NDArray[np.float64]) -> "StudentTParams":
        return StudentTParams(mean, self.scale, self.dof)


@dataclass(frozen=True, eq=False)
class StudentAux:
    """
    Per-point quantities describing the conditional distribution of the
    latent scale :math:`z` given :math:`y` for one component.
    """

    q_form: npt.NDArray[np.float64]
    dof: float
    dimension: int

    @classmethod
    def at(cls, params: StudentTParams, points: npt.NDArray[np.float64]) -> "StudentAux":
        return cls(params.quad_form(points), params.dof, params.dimension)

    @property
    def z_mean(self) -> npt.NDArray[np.float64]:
        """
        :math:`E[z \\mid y] = g(d/2 + 1, q) / g(d/2, q) = (a/2 + d/2) / (a/2
        + q)`.
        """
        half_a = self.dof / 2
        return (half_a + self.dimension / 2) / (half_a + self.q_form)

    @property
    def log_z_mean(self) -> npt.NDArray[np.float64]:
        """:math:`E[\\log z \\mid y] = \\psi(a/2 + d/2) - \\log(a/2 + q)`."""
        half_a = self.dof / 2
        log_mean = digamma(half_a + self.dimension / 2) - np.log(half_a + self.q_form)
        return log_mean  # type: ignore[no-any-return]


def log_g_tau(u: FloatOrArray, v: FloatOrArray, a: float) -> FloatOrArray:
    """
    Log of :py:func:`g_tau`.
    """
    half_a = a / 2
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    if not a > 0:
        raise StudentDomainError(f"Degrees of freedom must be positive, got {a}.")
    if not (np.all(half_a + u_arr > 0) and np.all(half_a + v_arr > 0)):
        raise StudentDomainError("g_tau requires a/2 + u > 0 and a/2 + v > 0.")
    out = (
        half_a * np.log(half_a)
        + gammaln(half_a + u_arr)
        - (half_a + u_arr) * np.log(half_a + v_arr)
        - gammaln(half_a)
    )
    return float(out) if np.ndim(out) == 0 else out


def g_tau(u: FloatOrArray, v: FloatOrArray, a: float) -> FloatOrArray:
    """
    The latent-scale integral :math:`\\int z^u e^{-v z}
    \\check\\tau_a(dz)` for :math:`\\check\\tau_a = \\mathrm{Gamma}(a/2,
    \\text{rate}=a/2)`:

    .. math::

        g(u, v) = \\frac{(a/2)^{a/2} \\Gamma(a/2 + u)}
                        {(a/2 + v)^{a/2 + u} \\Gamma(a/2)}

    >>> round(g_tau(1.0, 1.0, 2.0), 12)
    0.25
    """
    out = np.exp(log_g_tau(u, v, a))
    return float(out) if np.ndim(out) == 0 else out


def kappa_fn(x: float) -> float:
    """
    :math:`\\kappa(x) = \\log x + \\psi(x)`, an increasing bijection from
    :math:`(0, \\infty)` to :math:`\\mathbb{R}`.

    >>> round(kappa_fn(1.0), 10)
    -0.5772156649
    """
    if not x > 0:
        raise StudentDomainError(f"kappa is only defined for x > 0, got {x}.")
    return float(np.log(x) + digamma(x))


def _kappa_prime(x: float) -> float:
    return float(1 / x + polygamma(1, x))


def kappa_inv(v: float) -> float:
    """
    Inverse of :py:func:`kappa_fn`.

    The root is bracketed by repeated doubling or halving, located with
    Brent's method and polished with a Newton step.
    """
    if not np.isfinite(v):
        raise StudentDomainError(f"kappa_inv needs a finite argument, got {v}.")
    lo = hi = 1.0
    while kappa_fn(lo) > v:
        lo /= 2
    while kappa_fn(hi) < v:
        hi *= 2
    if lo == hi:
        x = lo
    else:
        x = float(brentq(lambda t: kappa_fn(t) - v, lo, hi, xtol=1e-300, rtol=1e-15))
    newton = x - (kappa_fn(x) - v) / _kappa_prime(x)
    if lo <= newton <= hi and abs(kappa_fn(newton) - v) < abs(kappa_fn(x) - v):
        x = newton
    return x


def _log_minus_digamma(x: float) -> float:
    # Positive and strictly decreasing, behaving like 1/(2x) for large x
    return float(np.log(x) - digamma(x))


def dof_from_statistic(statistic: float, max_dof: float = MAX_DOF) -> float:
    """
    Degrees of freedom maximising the expected log latent-scale density.

    Given :math:`s = E[z - \\log z]` under the weighting distribution, the
    optimal :math:`a = 2x` solves :math:`\\log x - \\psi(x) = s - 1`. When
    :math:`s - 1` is too small to be distinguished from zero (the weighting
    distribution looks Gaussian) ``max_dof`` is returned.

    >>> a = 7.0
    >>> x = a / 2
    >>> round(dof_from_statistic(1 + float(np.log(x) - digamma(x))), 10)
    7.0
    """
    rhs = statistic - 1
    if not np.isfinite(rhs):
        raise StudentDomainError(f"Degree of freedom statistic must be finite, got {statistic}.")
    if rhs <= _log_minus_digamma(max_dof / 2):
        return max_dof
    lo = hi = 1.0
    while _log_minus_digamma(lo) < rhs:
        lo /= 2
    while _log_minus_digamma(hi) > rhs:
        hi *= 2
    if lo == hi:
        return 2 * lo
    x = float(brentq(lambda t: _log_minus_digamma(t) - rhs, lo, hi, xtol=1e-300, rtol=1e-15))
    return 2 * x
