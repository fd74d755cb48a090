"""
Experiment configuration.

A configuration file is TOML with the sections `[grid]`, `[plate]`,
`[scheme]`, `[initial_condition]` and `[output]`, for example

    [grid]
    n1 = 32
    n2 = 32

    [scheme]
    scheme = "split_product"
    tau = 0.005
    final_time = 0.5
    sigma_a = 0.7071067811865476
    sigma_b = 0.5

Keys are lower_snake_case, unknown sections and keys are rejected.
"""

import dataclasses
import math
import tomllib
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Optional, TypeVar

from pysplit.errors import ConfigError, ModeIndexError
from pysplit.lattice import Field, GridSpec, read_field_csv
from pysplit.operators import PlateCoefficients
from pysplit.oracle import eigenpair, polynomial_deflection
from pysplit.steppers import SchemeConfig

T = TypeVar("T")

DESK_GRID = 32
FULL_GRID = 256
DEFAULT_PROBES: tuple[tuple[float, float], ...] = (
    (0.25, 0.25),
    (0.5, 0.5),
    (0.75, 0.25),
)
DEFAULT_TAU_LADDER: tuple[float, ...] = (0.01, 0.005, 0.0025)


@dataclass(frozen=True)
class InitialCondition:
    """
    The initial deflection; the initial velocity is zero.

    Args:
        kind: `poly` for `x1^2 (1 - x1) x2^2 (1 - x2)`,
            `eigenmode` for `psi_(k1, k2)`, `file` for a field CSV dump.
        k1: First mode index of `eigenmode`.
        k2: Second mode index of `eigenmode`.
        path: The dump of `file`.
    """

    kind: Literal["poly", "eigenmode", "file"] = "poly"
    k1: int = 1
    k2: int = 1
    path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in ("poly", "eigenmode", "file"):
            raise ConfigError(f"Unknown initial condition {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("Initial condition 'file' needs a path")

    def resolve(self, spec: GridSpec) -> Field:
        """
        The initial deflection on `spec`.

        Raises:
            ConfigError: The mode index or the dump does not fit the grid.
        """
        if self.kind == "poly":
            return polynomial_deflection(spec)
        if self.kind == "eigenmode":
            try:
                psi, _ = eigenpair(spec, self.k1, self.k2)
            except ModeIndexError as e:
                raise ConfigError(str(e)) from e
            return psi
        assert self.path is not None
        try:
            return read_field_csv(self.path, spec)
        except (OSError, ValueError) as e:
            raise ConfigError(f"Cannot read initial condition {self.path}: {e}") from e


@dataclass(frozen=True)
class OutputConfig:
    """
    Where and what a run writes.

    Args:
        output_dir: Directory of the CSV files.
        probe_points: Points `(x1, x2)` of the deflection histories.
        snapshot_times: Times of the exact-solution snapshots.
        energy_stride: Evaluate the energy every this many levels.
    """

    output_dir: str = "out"
    probe_points: tuple[tuple[float, float], ...] = DEFAULT_PROBES
    snapshot_times: tuple[float, ...] = (0.0, 0.25, 0.5)
    energy_stride: int = 1

    def __post_init__(self) -> None:
        if self.energy_stride < 1:
            raise ConfigError(
                f"Energy stride must be at least 1, got {self.energy_stride}"
            )
        if any(t < 0 for t in self.snapshot_times):
            raise ConfigError("Snapshot times must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one experiment needs.

    Raises:
        ConfigError: A probe point is not strictly inside the rectangle.
    """

    grid: GridSpec = field(default_factory=lambda: GridSpec.unit_square(DESK_GRID))
    plate: PlateCoefficients = field(default_factory=PlateCoefficients)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    initial_condition: InitialCondition = field(default_factory=InitialCondition)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self) -> None:
        for x1, x2 in self.output.probe_points:
            if not (0 < x1 < self.grid.l1 and 0 < x2 < self.grid.l2):
                raise ConfigError(
                    f"Probe point ({x1}, {x2}) is not inside "
                    f"(0, {self.grid.l1}) x (0, {self.grid.l2})"
                )

    @property
    def output_dir(self) -> Path:
        return Path(self.output.output_dir)


_SECTIONS: Mapping[str, type] = {
    "grid": GridSpec,
    "plate": PlateCoefficients,
    "scheme": SchemeConfig,
    "initial_condition": InitialCondition,
    "output": OutputConfig,
}


def config_from_mapping(data: Mapping[str, Any]) -> ExperimentConfig:
    """
    Build a configuration from parsed TOML, defaults filling missing keys.

    Examples:
        >>> cfg = config_from_mapping({"grid": {"n1": 16, "n2": 16}})
        >>> cfg.grid.n1, cfg.scheme.scheme
        (16, 'weighted')
        >>> config_from_mapping({"scheme": {"sigmaa": 0.5}})
        Traceback (most recent call last):
        ...
        pysplit.errors.ConfigError: Unknown keys in [scheme]: sigmaa

    Raises:
        ConfigError: A section or key is unknown or a value is invalid.
    """
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown sections: {', '.join(unknown)}")
    defaults = ExperimentConfig()
    sections: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        values = data.get(name, {})
        if not isinstance(values, Mapping):
            raise ConfigError(f"[{name}] must be a table")
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ConfigError(f"Unknown keys in [{name}]: {', '.join(unknown)}")
        normalized = _validated(lambda: _normalize(name, values), name)
        sections[name] = _build(name, getattr(defaults, name), normalized)

    return _validated(lambda: ExperimentConfig(**sections))


def read_config_mapping(path: str | PathLike[str]) -> dict[str, Any]:
    """
    Parse a TOML configuration file without validating it.

    Raises:
        ConfigError: The file is missing or malformed.
    """
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Malformed config {path}: {e}") from e


def load_config(path: str | PathLike[str]) -> ExperimentConfig:
    """
    Read a TOML configuration file.

    Raises:
        ConfigError: The file is missing, malformed or invalid.
    """
    return config_from_mapping(read_config_mapping(path))


def merge_overrides(
    data: Mapping[str, Any],
    *,
    tau: Optional[float] = None,
    scheme: Optional[str] = None,
    sigma: Optional[float] = None,
    sigma_a: Optional[float] = None,
    sigma_b: Optional[float] = None,
    grid: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> dict[str, Any]:
    """
    Merge command-line overrides into parsed TOML before validation.

    A file that is only valid together with its overrides, such as a step
    that does not divide the final time, is accepted once they are applied.

    Examples:
        >>> data = {"scheme": {"tau": 0.003}}
        >>> merged = merge_overrides(data, tau=0.05, grid=8)
        >>> merged["scheme"], merged["grid"]
        ({'tau': 0.05}, {'n1': 8, 'n2': 8})
        >>> data
        {'scheme': {'tau': 0.003}}
    """
    merged = {
        name: dict(values) if isinstance(values, Mapping) else values
        for name, values in data.items()
    }
    changes = {
        "scheme": dict(
            tau=tau, scheme=scheme, sigma=sigma, sigma_a=sigma_a, sigma_b=sigma_b
        ),
        "grid": dict(n1=grid, n2=grid),
        "output": dict(output_dir=output_dir),
    }
    for name, section in changes.items():
        values = {k: v for k, v in section.items() if v is not None}
        if not values:
            continue
        current = merged.setdefault(name, {})
        if not isinstance(current, dict):
            raise ConfigError(f"[{name}] must be a table")
        current.update(values)

    return merged


def with_overrides(
    cfg: ExperimentConfig,
    *,
    tau: Optional[float] = None,
    scheme: Optional[str] = None,
    sigma: Optional[float] = None,
    sigma_a: Optional[float] = None,
    sigma_b: Optional[float] = None,
    grid: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """
    Apply command-line overrides on top of a file configuration.

    `grid` sets `n1 = n2 = grid` and keeps the rectangle.

    Examples:
        >>> with_overrides(ExperimentConfig(), grid=8, tau=0.01).grid.n2
        8

    Raises:
        ConfigError: The overridden configuration is invalid.
    """
    scheme_changes = {
        k: v
        for k, v in dict(
            tau=tau, scheme=scheme, sigma=sigma, sigma_a=sigma_a, sigma_b=sigma_b
        ).items()
        if v is not None
    }

    def build() -> ExperimentConfig:
        spec = cfg.grid if grid is None else replace(cfg.grid, n1=grid, n2=grid)
        output = cfg.output
        if output_dir is not None:
            output = replace(cfg.output, output_dir=output_dir)
        return replace(
            cfg, grid=spec, scheme=replace(cfg.scheme, **scheme_changes), output=output
        )

    return _validated(build)


def full_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """The configuration on the full `256 x 256` grid."""
    return with_overrides(cfg, grid=FULL_GRID)


def _normalize(name: str, values: Mapping[str, Any]) -> dict[str, Any]:
    values = dict(values)
    if name == "output":
        if "probe_points" in values:
            values["probe_points"] = tuple(
                _point(p) for p in values["probe_points"]
            )
        if "snapshot_times" in values:
            values["snapshot_times"] = tuple(float(t) for t in values["snapshot_times"])

    return values


def _point(value: Any) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"A probe point is a pair [x1, x2], got {value!r}")
    x1, x2 = (float(v) for v in value)
    if not (math.isfinite(x1) and math.isfinite(x2)):
        raise ConfigError(f"Probe point {value!r} is not finite")

    return x1, x2


def _build(name: str, default: Any, values: Mapping[str, Any]) -> Any:
    if not values:
        return default

    return _validated(lambda: replace(default, **values), name)


def _validated(build: Callable[[], T], section: Optional[str] = None) -> T:
    try:
        return build()
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        where = f" in [{section}]" if section else ""
        raise ConfigError(f"Invalid configuration{where}: {e}") from e
