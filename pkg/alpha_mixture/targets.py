r"""
Unnormalised target densities.

A :py:class:`Target` wraps a vectorised log-density :math:`\log p` which
need not integrate to one. Three multimodal targets are built in (see
:py:class:`TargetKind`), each scaled by a constant :math:`c` (2 by default)
so that :math:`\int p = c`. Arbitrary low-dimensional targets can be
supplied as a tabulated grid with :py:func:`load_grid_target`.

.. autoclass:: Target
    :members:

.. autoclass:: TargetKind
    :members:

.. autofunction:: builtin_target

.. autofunction:: load_grid_target

Grid files
==========

Grid targets are UTF-8 CSV files with a header row ``x1,...,xd,logp``
followed by one row per grid point. The points must form a rectangular
tensor-product grid with rows sorted lexicographically by coordinate (the
last coordinate varying fastest). The log-density is interpolated linearly
inside the grid's bounding box and is ``-inf`` outside it.

.. code:: text

    x1,logp
    -1.0,-1.4189385332
    0.0,-0.9189385332
    1.0,-1.4189385332

Exceptions
==========

.. autoexception:: TargetError

.. autoexception:: UnknownTargetError

.. autoexception:: GridTargetFormatError
"""

from typing import Optional, Union

from dataclasses import dataclass

from enum import Enum

from pathlib import Path

import csv

import numpy as np
import numpy.typing as npt

from scipy.interpolate import RegularGridInterpolator

from alpha_mixture.divergence import LogDensity

from alpha_mixture.expfam import GaussianParams

from alpha_mixture.mixture import Component, Family, MixtureState

from alpha_mixture.student import StudentTParams


__all__ = [
    "Target",
    "TargetKind",
    "builtin_target",
    "load_grid_target",
    "TargetError",
    "UnknownTargetError",
    "GridTargetFormatError",
]


class TargetError(ValueError):
    """Base class for target errors."""


class UnknownTargetError(TargetError):
    """Thrown when an unknown built-in target is requested."""


class GridTargetFormatError(TargetError):
    """Thrown when a grid target file is malformed."""


@dataclass(frozen=True, eq=False)
class Target:
    """
    An unnormalised target density.
    """

    log_p: LogDensity
    """Maps an (n, d) array of points to (n,) log-density values."""

    dimension: int

    label: str

    normaliser: Optional[float] = None
    """:math:`\\int p`, when known."""

    true_mean: Optional[npt.NDArray[np.float64]] = None
    """The mean of the normalised target, when known."""

    true_mean_by_symmetry: bool = False
    """
    True when :py:attr:`true_mean` is the centre of symmetry of a target
    whose mean does not exist in the usual sense.
    """

    def log_density_at(self, y: npt.ArrayLike) -> float:
        """Evaluate :py:attr:`log_p` at a single point."""
        return float(self.log_p(np.asarray(y, dtype=float).reshape(1, self.dimension))[0])

    def require_true_mean(self) -> npt.NDArray[np.float64]:
        if self.true_mean is None:
            raise TargetError(f"Target {self.label!r} has no known mean.")
        return self.true_mean


class TargetKind(Enum):
    EWGMM = "ewgmm"
    """
    Equally weighted Gaussian mixture
    :math:`c[\\frac{1}{2}\\mathcal{N}(-2u_d, I) + \\frac{1}{2}\\mathcal{N}(2u_d, I)]`.
    """

    IMBALANCED_GMM = "imbalanced_gmm"
    """
    :math:`c[0.35\\,\\mathcal{N}(-2u_d, I) + 0.25\\,\\mathcal{N}(2u_d, I) +
    0.4\\,\\mathcal{N}(u_d, I)]`.
    """

    EWSMM = "ewsmm"
    """
    Equally weighted Student's t mixture with 2 degrees of freedom
    :math:`c[\\frac{1}{2}t(-2u_d, I, 2) + \\frac{1}{2}t(2u_d, I, 2)]`.
    """

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]


_DESCRIPTIONS = {
    TargetKind.EWGMM: "equally weighted Gaussian mixture at -2u and 2u",
    TargetKind.IMBALANCED_GMM: "imbalanced Gaussian mixture at -2u, 2u and u",
    TargetKind.EWSMM: "equally weighted Student's t mixture (2 dof) at -2u and 2u",
}


def _mixture_of(
    kind: TargetKind, d: int
) -> tuple[MixtureState, npt.NDArray[np.float64], bool]:
    u = np.ones(d)
    eye = np.eye(d)
    components: list[Component]
    if kind == TargetKind.EWGMM:
        weights = [0.5, 0.5]
        components = [GaussianParams(-2 * u, eye), GaussianParams(2 * u, eye)]
        family = Family.GAUSSIAN_FULL
    elif kind == TargetKind.IMBALANCED_GMM:
        weights = [0.35, 0.25, 0.4]
        components = [
            GaussianParams(-2 * u, eye),
            GaussianParams(2 * u, eye),
            GaussianParams(u, eye),
        ]
        family = Family.GAUSSIAN_FULL
    else:
        weights = [0.5, 0.5]
        components = [StudentTParams(-2 * u, eye, 2.0), StudentTParams(2 * u, eye, 2.0)]
        family = Family.STUDENT_T
    state = MixtureState(np.asarray(weights), tuple(components), family)
    # With 2 degrees of freedom the Student components have no mean; the
    # symmetric mixture is centred on zero.
    by_symmetry = kind == TargetKind.EWSMM
    true_mean = np.zeros(d) if by_symmetry else state.mixture_mean()
    return state, true_mean, by_symmetry


def builtin_target(kind: Union[TargetKind, str], d: int, c: float = 2.0) -> Target:
    """
    Construct one of the built-in targets in dimension ``d`` scaled by ``c``.

    >>> target = builtin_target("ewgmm", 1)
    >>> round(float(np.exp(target.log_density_at([0.0]))), 7)
    0.1079819
    """
    if isinstance(kind, str):
        try:
            kind = TargetKind(kind)
        except ValueError:
            known = ", ".join(k.value for k in TargetKind)
            raise UnknownTargetError(
                f"Unknown target {kind!r}; expected one of {known}."
            ) from None
    if d < 1:
        raise TargetError(f"Target dimension must be at least 1, got {d}.")
    if not c > 0:
        raise TargetError(f"Target scale c must be positive, got {c}.")

    state, true_mean, by_symmetry = _mixture_of(kind, d)
    log_c = float(np.log(c))

    def log_p(points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        return log_c + state.log_density(points)

    return Target(
        log_p=log_p,
        dimension=d,
        label=kind.value,
        normaliser=c,
        true_mean=true_mean,
        true_mean_by_symmetry=by_symmetry,
    )


def _parse_grid_rows(path: Path) -> tuple[int, npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise GridTargetFormatError(f"{path}: file is empty.") from None
        d = len(header) - 1
        expected = [f"x{i + 1}" for i in range(d)] + ["logp"]
        if d < 1 or header != expected:
            raise GridTargetFormatError(
                f"{path}: header must be {','.join(expected) if d >= 1 else 'x1,...,xd,logp'}, "
                f"got {','.join(header)}."
            )
        rows = []
        for line_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != d + 1:
                raise GridTargetFormatError(
                    f"{path}:{line_number}: expected {d + 1} columns, got {len(row)}."
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise GridTargetFormatError(
                    f"{path}:{line_number}: could not parse {row!r} as numbers."
                ) from None
            if not all(np.isfinite(values)):
                raise GridTargetFormatError(f"{path}:{line_number}: non-finite value.")
            rows.append(values)
    if not rows:
        raise GridTargetFormatError(f"{path}: no grid points.")
    data = np.asarray(rows, dtype=float)
    return d, data[:, :d], data[:, d]


def load_grid_target(path: Union[str, Path]) -> Target:
    """
    Load a tabulated log-density (see the module documentation for the
    format).
    """
    path = Path(path)
    d, points, values = _parse_grid_rows(path)

    axes = [np.unique(points[:, k]) for k in range(d)]
    shape = tuple(len(axis) for axis in axes)
    expected = np.stack(
        [m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=1
    )
    if len(points) != len(expected) or not np.array_equal(points, expected):
        raise GridTargetFormatError(
            f"{path}: rows must form a rectangular grid with strictly "
            f"increasing axes, sorted lexicographically."
        )

    grid_values = values.reshape(shape)
    lower = np.array([axis[0] for axis in axes])
    upper = np.array([axis[-1] for axis in axes])

    # Axes with a single coordinate cannot be interpolated along; points must
    # match that coordinate exactly.
    varying = [k for k in range(d) if shape[k] > 1]
    interpolator: Optional[RegularGridInterpolator] = None
    if varying:
        interpolator = RegularGridInterpolator(
            [axes[k] for k in varying],
            grid_values.reshape([shape[k] for k in varying]),
            method="linear",
            bounds_error=False,
            fill_value=-np.inf,
        )
    single_value = float(values[0])

    def log_p(query: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        query = np.asarray(query, dtype=float).reshape(-1, d)
        out = np.full(len(query), -np.inf)
        inside = np.all((query >= lower) & (query <= upper), axis=1)
        if interpolator is None:
            out[inside] = single_value
        elif np.any(inside):
            out[inside] = interpolator(query[inside][:, varying])
        return out

    return Target(log_p=log_p, dimension=d, label=path.stem)
