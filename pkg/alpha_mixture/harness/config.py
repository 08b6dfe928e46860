"""
Experiment configuration.

Experiments are described by an :py:class:`ExperimentConfig`, normally read
from a TOML file with :py:func:`load_config`. Keys mirror the dataclass field
names. A complete example:

.. code:: toml

    family = "gaussian-fixed-sigma2"
    num_components = 10
    sigma2 = 1.0
    rule = "MG"
    trials = 30
    seed = 0
    workers = 4
    integrals = "monte-carlo"

    [target]
    kind = "ewgmm"   # or: path = "my_target.csv"
    dimension = 16
    c = 2.0

    [schedule]
    alpha = 0.2
    num_samples = 200
    budget = 20000   # or: num_iterations = 100
    eta = 0.0        # a number or one value per iteration
    kappa = 0.0
    gamma = 0.5
    sampler = "is_n"

    [init]
    mean_variance = 10.0
    weights = "uniform"
    dof = 5.0

    [quadrature]      # only used when integrals = "quadrature"
    kind = "gauss-hermite"
    order = 128
    scale = 3.0

    [sweep]           # only used by the 'sweep' command
    eta = [0.0, 0.5]
    gamma = [0.1, 0.5]
    num_components = [10]

.. autoclass:: ExperimentConfig
    :members:

.. autoclass:: TargetSpec
    :members:

.. autoclass:: InitConfig
    :members:

.. autoclass:: QuadratureConfig
    :members:

.. autoclass:: SweepSpec
    :members:

.. autoclass:: UpdateRule
    :members:

.. autoclass:: IntegralMode
    :members:

.. autofunction:: load_config
"""

from typing import Any, Iterator, Mapping, Optional, Type, TypeVar, Union

from dataclasses import dataclass, field, replace

from enum import Enum

from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import numpy.typing as npt

from alpha_mixture.harness.exceptions import ConfigError

from alpha_mixture.mixture import (
    Family,
    SamplerKind,
    Schedule,
    ScheduleConfig,
    ScheduleError,
)

from alpha_mixture.quadrature import (
    GridKind,
    QuadratureGrid,
    UnsupportedGridError,
    build_grid,
    default_order,
)

from alpha_mixture.targets import Target, TargetError, builtin_target, load_grid_target


__all__ = [
    "UpdateRule",
    "IntegralMode",
    "TargetSpec",
    "InitConfig",
    "QuadratureConfig",
    "ExperimentConfig",
    "SweepSpec",
    "load_config",
]


E = TypeVar("E", bound=Enum)


class UpdateRule(Enum):
    MG = "MG"
    """Maximisation approach (all component parameters)."""

    RGD = "RGD"
    """Rényi gradient descent on the component means."""


class IntegralMode(Enum):
    MONTE_CARLO = "monte-carlo"
    """Importance sampling with the configured sampler."""

    QUADRATURE = "quadrature"
    """Integrals evaluated on a quadrature grid (dimension 3 or less)."""


def _enum(cls: Type[E], value: Any, name: str) -> E:
    if isinstance(value, cls):
        return value
    try:
        return cls(value)
    except ValueError:
        options = ", ".join(repr(e.value) for e in cls)
        raise ConfigError(f"Invalid {name} {value!r}; expected one of {options}.") from None


def _check_keys(mapping: Mapping[str, Any], allowed: set[str], section: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(
            f"Unknown key(s) in {section}: {', '.join(sorted(unknown))}."
        )


@dataclass(frozen=True)
class TargetSpec:
    """
    Either a built-in target (``kind``, ``dimension`` and ``c``) or a grid
    target file (``path``).
    """

    kind: Optional[str] = "ewgmm"
    dimension: int = 1
    c: float = 2.0
    path: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.path is not None:
            object.__setattr__(self, "path", Path(self.path))
            object.__setattr__(self, "kind", None)
        elif self.kind is None:
            raise ConfigError("A target needs either a kind or a path.")
        if self.dimension < 1:
            raise ConfigError(f"Target dimension must be at least 1, got {self.dimension}.")

    @property
    def label(self) -> str:
        if self.path is not None:
            return self.path.stem
        assert self.kind is not None
        return self.kind

    def build(self) -> Target:
        try:
            if self.path is not None:
                return load_grid_target(self.path)
            assert self.kind is not None
            return builtin_target(self.kind, self.dimension, self.c)
        except (TargetError, OSError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "TargetSpec":
        _check_keys(mapping, {"kind", "dimension", "c", "path"}, "[target]")
        return cls(
            kind=mapping.get("kind", "ewgmm"),
            dimension=int(mapping.get("dimension", 1)),
            c=float(mapping.get("c", 2.0)),
            path=Path(mapping["path"]) if "path" in mapping else None,
        )


@dataclass(frozen=True)
class InitConfig:
    """
    Initialisation of the variational mixture. Means are drawn from
    :math:`\\mathcal{N}(0, \\text{mean_variance} \\cdot I)`.
    """

    mean_variance: float = 10.0

    weights: Union[str, tuple[float, ...]] = "uniform"
    """Either ``"uniform"`` or an explicit weight per component."""

    dof: float = 5.0
    """Initial degrees of freedom of Student's t components."""

    def __post_init__(self) -> None:
        if not self.mean_variance > 0:
            raise ConfigError("init.mean_variance must be positive.")
        if not self.dof > 0:
            raise ConfigError("init.dof must be positive.")
        if isinstance(self.weights, str):
            if self.weights != "uniform":
                raise ConfigError(
                    f"init.weights must be 'uniform' or a list, got {self.weights!r}."
                )
        else:
            weights = tuple(float(w) for w in self.weights)
            if not all(w > 0 for w in weights) or abs(sum(weights) - 1) > 1e-12:
                raise ConfigError("init.weights must be positive and sum to one.")
            object.__setattr__(self, "weights", weights)

    def initial_weights(self, num_components: int) -> npt.NDArray[np.float64]:
        if isinstance(self.weights, str):
            return np.full(num_components, 1 / num_components)
        if len(self.weights) != num_components:
            raise ConfigError(
                f"init.weights has {len(self.weights)} entries for {num_components} components."
            )
        return np.asarray(self.weights)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "InitConfig":
        _check_keys(mapping, {"mean_variance", "weights", "dof"}, "[init]")
        weights = mapping.get("weights", "uniform")
        return cls(
            mean_variance=float(mapping.get("mean_variance", 10.0)),
            weights=weights if isinstance(weights, str) else tuple(weights),
            dof=float(mapping.get("dof", 5.0)),
        )


@dataclass(frozen=True)
class QuadratureConfig:
    """
    Grid used when integrals are evaluated by quadrature.
    """

    kind: GridKind = GridKind.GAUSS_HERMITE

    order: Optional[int] = None
    """Points per dimension; defaults to
    :py:func:`~alpha_mixture.quadrature.default_order`."""

    center: float = 0.0
    scale: float = 3.0
    lower: float = -10.0
    upper: float = 10.0

    psi_exact: bool = True
    """Record the exact objective at every iteration."""

    normalisation_tol: float = 1e-6

    def build(self, dimension: int) -> QuadratureGrid:
        try:
            return build_grid(
                self.kind,
                dimension,
                self.order if self.order is not None else default_order(dimension),
                center=self.center,
                scale=self.scale,
                lower=self.lower,
                upper=self.upper,
            )
        except UnsupportedGridError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "QuadratureConfig":
        _check_keys(
            mapping,
            {
                "kind", "order", "center", "scale", "lower", "upper",
                "psi_exact", "normalisation_tol",
            },
            "[quadrature]",
        )
        return cls(
            kind=_enum(GridKind, mapping.get("kind", "gauss-hermite"), "quadrature kind"),
            order=int(mapping["order"]) if "order" in mapping else None,
            center=float(mapping.get("center", 0.0)),
            scale=float(mapping.get("scale", 3.0)),
            lower=float(mapping.get("lower", -10.0)),
            upper=float(mapping.get("upper", 10.0)),
            psi_exact=bool(mapping.get("psi_exact", True)),
            normalisation_tol=float(mapping.get("normalisation_tol", 1e-6)),
        )


def _schedule_from_mapping(mapping: Mapping[str, Any]) -> ScheduleConfig:
    _check_keys(
        mapping,
        {"alpha", "num_samples", "num_iterations", "budget", "eta", "kappa", "gamma", "sampler"},
        "[schedule]",
    )
    if "alpha" not in mapping:
        raise ConfigError("[schedule] must set alpha.")
    num_samples = int(mapping.get("num_samples", 200))
    if ("budget" in mapping) == ("num_iterations" in mapping):
        raise ConfigError("[schedule] must set exactly one of budget and num_iterations.")
    if "budget" in mapping:
        budget = int(mapping["budget"])
        if num_samples < 1 or budget % num_samples != 0:
            raise ConfigError(
                f"budget {budget} is not a multiple of num_samples {num_samples}."
            )
        num_iterations = budget // num_samples
    else:
        num_iterations = int(mapping["num_iterations"])

    def schedule(name: str, default: float) -> Union[float, tuple[float, ...]]:
        value = mapping.get(name, default)
        if isinstance(value, (list, tuple)):
            return tuple(float(v) for v in value)
        return float(value)

    try:
        return ScheduleConfig(
            alpha=float(mapping["alpha"]),
            num_samples=num_samples,
            num_iterations=num_iterations,
            eta=schedule("eta", 0.0),
            kappa=schedule("kappa", 0.0),
            gamma=schedule("gamma", 1.0),
            sampler=_enum(SamplerKind, mapping.get("sampler", "is_n"), "sampler"),
        )
    except ScheduleError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything needed to run (and reproduce) a replicated experiment.
    """

    target: TargetSpec
    schedule: ScheduleConfig

    family: Family = Family.GAUSSIAN_FIXED_SIGMA2

    num_components: int = 10
    """J, the number of mixture components."""

    sigma2: float = 1.0
    """Initial (and, for the fixed family, permanent) component variance."""

    rule: UpdateRule = UpdateRule.MG

    trials: int = 30
    seed: int = 0

    workers: int = 1
    """Number of trials run concurrently."""

    integrals: IntegralMode = IntegralMode.MONTE_CARLO

    init: InitConfig = field(default_factory=InitConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    snapshot_limit: int = 64
    """Weights are recorded every iteration only for at most this many
    components; otherwise only the first and last iterations are kept."""

    def __post_init__(self) -> None:
        if self.num_components < 1:
            raise ConfigError("num_components must be at least 1.")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive.")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1.")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative.")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1.")
        if (
            self.integrals == IntegralMode.QUADRATURE
            and self.target.path is None
            and self.target.dimension > 3
        ):
            raise ConfigError("Quadrature integrals are limited to dimension 3 or less.")

    @property
    def budget(self) -> int:
        """Target density evaluations used by the updates of one trial (N * M)."""
        return self.schedule.num_samples * self.schedule.num_iterations

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """
        Replace top-level fields, ignoring overrides whose value is None (e.g.
        command line flags which were not given).
        """
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "ExperimentConfig":
        _check_keys(
            mapping,
            {
                "target", "schedule", "family", "num_components", "sigma2", "rule",
                "trials", "seed", "workers", "integrals", "init", "quadrature",
                "snapshot_limit", "sweep",
            },
            "the configuration",
        )
        if "schedule" not in mapping:
            raise ConfigError("The configuration needs a [schedule] section.")
        try:
            return cls(
                target=TargetSpec.from_mapping(mapping.get("target", {})),
                schedule=_schedule_from_mapping(mapping["schedule"]),
                family=_enum(Family, mapping.get("family", "gaussian-fixed-sigma2"), "family"),
                num_components=int(mapping.get("num_components", 10)),
                sigma2=float(mapping.get("sigma2", 1.0)),
                rule=_enum(UpdateRule, mapping.get("rule", "MG"), "rule"),
                trials=int(mapping.get("trials", 30)),
                seed=int(mapping.get("seed", 0)),
                workers=int(mapping.get("workers", 1)),
                integrals=_enum(IntegralMode, mapping.get("integrals", "monte-carlo"), "integrals"),
                init=InitConfig.from_mapping(mapping.get("init", {})),
                quadrature=QuadratureConfig.from_mapping(mapping.get("quadrature", {})),
                snapshot_limit=int(mapping.get("snapshot_limit", 64)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid configuration value: {exc}") from exc

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> "ExperimentConfig":
        return load_config(path)[0]


@dataclass(frozen=True)
class SweepSpec:
    """
    Values to sweep over. Empty tuples leave the corresponding setting of the
    base configuration unchanged.
    """

    eta: tuple[float, ...] = ()
    gamma: tuple[float, ...] = ()
    num_components: tuple[int, ...] = ()

    def cells(
        self, base: ExperimentConfig
    ) -> Iterator[tuple[Schedule, Schedule, int, ExperimentConfig]]:
        """
        Iterate over the cartesian product of the swept values, yielding
        ``(eta, gamma, num_components, config)`` with ``gamma`` varying
        fastest.
        """
        etas = self.eta or (base.schedule.eta,)
        gammas = self.gamma or (base.schedule.gamma,)
        num_components = self.num_components or (base.num_components,)
        for j in num_components:
            for eta in etas:
                for gamma in gammas:
                    try:
                        schedule = replace(base.schedule, eta=eta, gamma=gamma)
                    except ScheduleError as exc:
                        raise ConfigError(str(exc)) from exc
                    yield eta, gamma, j, replace(base, schedule=schedule, num_components=j)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "SweepSpec":
        _check_keys(mapping, {"eta", "gamma", "num_components"}, "[sweep]")
        try:
            return cls(
                eta=tuple(float(v) for v in mapping.get("eta", ())),
                gamma=tuple(float(v) for v in mapping.get("gamma", ())),
                num_components=tuple(int(v) for v in mapping.get("num_components", ())),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid [sweep] value: {exc}") from exc


def load_config(path: Union[str, Path]) -> tuple[ExperimentConfig, SweepSpec]:
    """
    Read an experiment configuration (and any ``[sweep]`` section) from a
    TOML file.
    """
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"Could not read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_mapping(data), SweepSpec.from_mapping(data.get("sweep", {}))
