"""
Deterministic tensor-product quadrature grids in one to three dimensions.

Grids are used wherever an integral against Lebesgue measure must be
evaluated exactly (up to quadrature error) rather than estimated by Monte
Carlo: the exact divergence oracle, the quadrature integral mode of the
experiment harness and most of the test suite.

.. autoclass:: GridKind
    :members:

.. autoclass:: QuadratureGrid
    :members:

.. autofunction:: build_grid

.. autofunction:: default_order

.. autofunction:: order_gap

.. autoexception:: UnsupportedGridError
"""

from typing import Callable, Sequence, Union

from dataclasses import dataclass, field

from enum import Enum

import numpy as np
import numpy.typing as npt

from numpy.polynomial.hermite import hermgauss

from scipy.special import logsumexp


__all__ = [
    "GridKind",
    "QuadratureGrid",
    "build_grid",
    "default_order",
    "order_gap",
    "UnsupportedGridError",
]


MAX_DIMENSION = 3
"""
Tensor-product grids grow as order**dimension; beyond this dimension only
Monte Carlo estimates are supported.
"""

DEFAULT_ORDERS = {1: 128, 2: 64, 3: 24}


class UnsupportedGridError(ValueError):
    """
    Thrown when a grid is requested with an unsupported dimension or order.
    """


class GridKind(Enum):
    GAUSS_HERMITE = "gauss-hermite"
    """
    Tensor product of Gauss--Hermite rules, re-weighted to integrate against
    Lebesgue measure.
    """

    UNIFORM = "uniform"
    """
    Tensor product of midpoint rules on a box.
    """


Bound = Union[float, Sequence[float]]


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """
    A set of nodes and positive weights such that ``sum(w * f(nodes))``
    approximates the integral of ``f`` over :math:`\\mathbb{R}^d`.
    """

    dimension: int

    nodes: npt.NDArray[np.float64]
    """An (n, dimension) array of node locations."""

    weights: npt.NDArray[np.float64]
    """An (n,) array of strictly positive weights."""

    kind: GridKind

    log_weights: npt.NDArray[np.float64] = field(init=False)

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.dimension)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(nodes) != len(weights):
            raise UnsupportedGridError(
                f"Got {len(nodes)} nodes but {len(weights)} weights."
            )
        if not np.all(weights > 0):
            raise UnsupportedGridError("Quadrature weights must all be positive.")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "log_weights", np.log(weights))

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: npt.NDArray[np.float64]) -> float:
        """Integrate a function given its values at the nodes."""
        return float(np.dot(self.weights, values))

    def log_integrate(self, log_values: npt.NDArray[np.float64]) -> float:
        """
        Return the log of the integral of a function given the log of its
        values at the nodes. Nodes where the function is zero (log value
        ``-inf``) contribute nothing.
        """
        return float(logsumexp(self.log_weights + log_values))


def _per_dimension(value: Bound, dimension: int, name: str) -> npt.NDArray[np.float64]:
    out = np.broadcast_to(np.asarray(value, dtype=float), (dimension,)).copy()
    if not np.all(np.isfinite(out)):
        raise UnsupportedGridError(f"Grid {name} must be finite.")
    return out


def _tensor_product(
    axes_nodes: list[npt.NDArray[np.float64]],
    axes_log_weights: list[npt.NDArray[np.float64]],
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    node_mesh = np.meshgrid(*axes_nodes, indexing="ij")
    log_weight_mesh = np.meshgrid(*axes_log_weights, indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in node_mesh], axis=1)
    log_weights = np.sum([m.reshape(-1) for m in log_weight_mesh], axis=0)
    return nodes, log_weights


def build_grid(
    kind: GridKind,
    dimension: int,
    order: int,
    *,
    center: Bound = 0.0,
    scale: Bound = 1.0,
    lower: Bound = -1.0,
    upper: Bound = 1.0,
) -> QuadratureGrid:
    """
    Build a tensor-product quadrature grid.

    Parameters
    ==========
    kind : GridKind
    dimension : int
        Between 1 and 3 inclusive.
    order : int
        Number of points per dimension (at least 2).
    center, scale : float or sequence of floats
        Gauss--Hermite grids only. Nodes are placed at ``center +
        sqrt(2) * scale * x`` for the Hermite roots ``x``. The rule is exact
        for a Gaussian of mean ``center`` and standard deviation ``scale``
        multiplied by any polynomial of degree below ``2 * order``.
    lower, upper : float or sequence of floats
        Uniform grids only. The box to integrate over; the function is
        treated as zero outside it.

    Examples
    ========

    >>> grid = build_grid(GridKind.GAUSS_HERMITE, 1, 4)
    >>> round(grid.integrate(np.exp(-grid.nodes[:, 0] ** 2 / 2)), 10)
    2.5066282746
    """
    if not 1 <= dimension <= MAX_DIMENSION:
        raise UnsupportedGridError(
            f"Quadrature supports dimensions 1 to {MAX_DIMENSION}, got {dimension}."
        )
    if order < 2:
        raise UnsupportedGridError(f"Quadrature order must be at least 2, got {order}.")

    axes_nodes = []
    axes_log_weights = []
    if kind == GridKind.GAUSS_HERMITE:
        centers = _per_dimension(center, dimension, "center")
        scales = _per_dimension(scale, dimension, "scale")
        if not np.all(scales > 0):
            raise UnsupportedGridError("Gauss-Hermite scale must be positive.")
        x, w = hermgauss(order)
        # Hermite weights underflow for very high orders; those nodes carry
        # no mass and are dropped.
        keep = w > 0
        x, w = x[keep], w[keep]
        for c, s in zip(centers, scales):
            axes_nodes.append(c + np.sqrt(2.0) * s * x)
            axes_log_weights.append(np.log(w) + x**2 + np.log(np.sqrt(2.0) * s))
    elif kind == GridKind.UNIFORM:
        lowers = _per_dimension(lower, dimension, "lower bound")
        uppers = _per_dimension(upper, dimension, "upper bound")
        if not np.all(uppers > lowers):
            raise UnsupportedGridError("Uniform grid bounds must satisfy lower < upper.")
        for lo, hi in zip(lowers, uppers):
            h = (hi - lo) / order
            axes_nodes.append(lo + h * (np.arange(order) + 0.5))
            axes_log_weights.append(np.full(order, np.log(h)))
    else:
        raise UnsupportedGridError(f"Unknown grid kind {kind!r}.")

    nodes, log_weights = _tensor_product(axes_nodes, axes_log_weights)
    return QuadratureGrid(dimension, nodes, np.exp(log_weights), kind)


def default_order(dimension: int) -> int:
    """Default per-dimension order for a grid of the given dimension."""
    try:
        return DEFAULT_ORDERS[dimension]
    except KeyError:
        raise UnsupportedGridError(
            f"Quadrature supports dimensions 1 to {MAX_DIMENSION}, got {dimension}."
        ) from None


def order_gap(
    log_integrand: Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]],
    kind: GridKind,
    dimension: int,
    order: int,
    **grid_kwargs: Bound,
) -> float:
    """
    Self-check a quadrature order: integrate ``exp(log_integrand)`` at
    ``order`` and ``order // 2`` points per dimension and return the relative
    difference between the two results.
    """
    coarse = build_grid(kind, dimension, max(2, order // 2), **grid_kwargs)
    fine = build_grid(kind, dimension, order, **grid_kwargs)
    log_coarse = coarse.log_integrate(log_integrand(coarse.nodes))
    log_fine = fine.log_integrate(log_integrand(fine.nodes))
    return float(abs(np.expm1(log_coarse - log_fine)))
