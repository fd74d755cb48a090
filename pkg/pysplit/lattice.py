import math
from dataclasses import dataclass
from os import PathLike
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from pysplit.errors import GridMismatchError, InvalidGridError, NotNonNegativeError

if TYPE_CHECKING:
    from pysplit.linear_map import LinearMap

FIELD_COLUMNS = ["i1", "i2", "x1", "x2", "value"]
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class GridSpec:
    """
    A uniform rectangular grid on `(0, l1) x (0, l2)`.

    Node `(i1, i2)` sits at `(i1 * h1, i2 * h2)`.
    Only the interior nodes `1 <= i_a <= n_a - 1` carry unknowns,
    the boundary values are zero implicitly.

    Args:
        l1: Side length in the first direction.
        l2: Side length in the second direction.
        n1: Number of subdivisions in the first direction.
        n2: Number of subdivisions in the second direction.

    Examples:
        >>> spec = GridSpec(1.0, 1.0, 4, 4)
        >>> spec.h1, spec.shape, spec.size
        (0.25, (3, 3), 9)
    """

    l1: float
    l2: float
    n1: int
    n2: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.l1) and self.l1 > 0):
            raise InvalidGridError("Side length l1 must be positive and finite")
        if not (math.isfinite(self.l2) and self.l2 > 0):
            raise InvalidGridError("Side length l2 must be positive and finite")
        if not isinstance(self.n1, int) or self.n1 < 2:
            raise InvalidGridError(
                "Subdivision count n1 must be an integer of at least 2"
            )
        if not isinstance(self.n2, int) or self.n2 < 2:
            raise InvalidGridError(
                "Subdivision count n2 must be an integer of at least 2"
            )

    @classmethod
    def unit_square(cls, n: int) -> "GridSpec":
        """Create an `n x n` grid on the unit square."""
        return cls(1.0, 1.0, n, n)

    @property
    def h1(self) -> float:
        """The mesh step in the first direction."""
        return self.l1 / self.n1

    @property
    def h2(self) -> float:
        """The mesh step in the second direction."""
        return self.l2 / self.n2

    @property
    def cell_area(self) -> float:
        return self.h1 * self.h2

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of the interior value array, indexed as `[i2 - 1, i1 - 1]`."""
        return self.n2 - 1, self.n1 - 1

    @property
    def size(self) -> int:
        """The number of interior nodes."""
        return (self.n1 - 1) * (self.n2 - 1)

    @property
    def x1(self) -> NDArray[np.float64]:
        return np.arange(1, self.n1, dtype=np.float64) * self.h1

    @property
    def x2(self) -> NDArray[np.float64]:
        return np.arange(1, self.n2, dtype=np.float64) * self.h2

    def mesh(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Coordinate arrays of the interior nodes, both of shape `self.shape`."""
        x1, x2 = np.meshgrid(self.x1, self.x2, indexing="xy")

        return x1, x2

    def nearest_node(self, x1: float, x2: float) -> tuple[int, int]:
        """
        Snap a point strictly inside the rectangle to the closest interior node.

        Examples:
            >>> GridSpec(1.0, 1.0, 4, 4).nearest_node(0.3, 0.9)
            (1, 3)
        """
        if not (0 < x1 < self.l1 and 0 < x2 < self.l2):
            raise InvalidGridError(f"Point ({x1}, {x2}) is not inside the rectangle")
        i1 = min(max(round(x1 / self.h1), 1), self.n1 - 1)
        i2 = min(max(round(x2 / self.h2), 1), self.n2 - 1)

        return int(i1), int(i2)


@dataclass(frozen=True, eq=False)
class Field:
    """
    A grid function on the interior nodes of a grid.

    The values are stored as a `(n2 - 1) x (n1 - 1)` array, so flattening
    it yields the documented order: by `i2` first, then by `i1`.

    Args:
        spec: The grid the function lives on.
        values: The interior values.

    Examples:
        >>> spec = GridSpec(1.0, 1.0, 4, 4)
        >>> u = Field.from_function(spec, lambda x1, x2: x1 + 10 * x2)
        >>> float(u.values[0, 2])
        3.25
        >>> (2 * u - u).values.shape
        (3, 3)
    """

    spec: GridSpec
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.spec.shape:
            if values.size != self.spec.size:
                raise GridMismatchError(
                    f"Field needs {self.spec.size} values, got {values.size}"
                )
            values = values.reshape(self.spec.shape)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "Field":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def from_function(
        cls,
        spec: GridSpec,
        func: Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]],
    ) -> "Field":
        """Sample a vectorized function `func(x1, x2)` at the interior nodes."""
        x1, x2 = spec.mesh()

        return cls(spec, np.broadcast_to(func(x1, x2), spec.shape).copy())

    @classmethod
    def random(cls, spec: GridSpec, rng: np.random.Generator) -> "Field":
        return cls(spec, rng.standard_normal(spec.shape))

    def copy(self) -> "Field":
        return Field(self.spec, self.values.copy())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def _check(self, other: "Field") -> None:
        if not isinstance(other, Field):
            raise TypeError(f"Expected a Field, got {type(other)}")
        if other.spec != self.spec:
            raise GridMismatchError(f"Grid {other.spec} does not match {self.spec}")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.spec, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.spec, self.values - other.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.spec, self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "Field":
        return Field(self.spec, self.values / float(scalar))

    def __neg__(self) -> "Field":
        return Field(self.spec, -self.values)

    def __repr__(self) -> str:
        return f"Field(spec={self.spec}, norm={norm(self):.6g})"


def inner_product(u: Field, v: Field) -> float:
    """
    The grid inner product `sum(u(x) v(x) h1 h2)` over the interior nodes.

    Examples:
        >>> spec = GridSpec(1.0, 1.0, 2, 2)
        >>> u = Field(spec, [2.0])
        >>> inner_product(u, u)
        1.0
    """
    u._check(v)

    return float(np.vdot(u.values, v.values)) * u.spec.cell_area


def norm(u: Field) -> float:
    """The grid `L2` norm induced by `inner_product`."""
    return math.sqrt(max(inner_product(u, u), 0.0))


def weighted_norm(u: Field, operator: "LinearMap") -> float:
    """
    The energy norm `(S u, u)^(1/2)` of a self-adjoint non-negative map `S`.

    Round-off may turn a zero quadratic form slightly negative,
    values down to `-1e-12 * ||u||^2` are clipped to zero.

    Raises:
        NotNonNegativeError: The quadratic form is clearly negative.
    """
    form = inner_product(operator.apply(u), u)
    if form < 0:
        if form < -1e-12 * inner_product(u, u):
            raise NotNonNegativeError(
                f"Quadratic form of {operator.descriptor} is negative: {form:.3e}"
            )
        form = 0.0

    return math.sqrt(form)


def field_to_frame(u: Field) -> pd.DataFrame:
    """
    Tabulate a field in the dump layout `i1, i2, x1, x2, value`.

    Examples:
        >>> spec = GridSpec(1.0, 1.0, 2, 3)
        >>> field_to_frame(Field(spec, [1.0, 2.0]))[["i1", "i2", "value"]]
           i1  i2  value
        0   1   1    1.0
        1   1   2    2.0
    """
    spec = u.spec
    i1, i2 = np.meshgrid(np.arange(1, spec.n1), np.arange(1, spec.n2), indexing="xy")
    x1, x2 = spec.mesh()

    return pd.DataFrame(
        {
            "i1": i1.ravel(),
            "i2": i2.ravel(),
            "x1": x1.ravel(),
            "x2": x2.ravel(),
            "value": u.values.ravel(),
        }
    )


def write_field_csv(u: Field, path: str | PathLike[str]) -> None:
    """Dump a field as CSV with 17 significant digits."""
    field_to_frame(u).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_field_csv(path: str | PathLike[str], spec: Optional[GridSpec] = None) -> Field:
    """
    Read a field written by `write_field_csv`.

    If no grid is given, a unit-step-consistent grid is reconstructed from
    the node indices and coordinates of the dump.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != FIELD_COLUMNS:
        raise GridMismatchError(
            f"Expected columns {FIELD_COLUMNS}, got {list(frame.columns)}"
        )
    if spec is None:
        n1 = int(frame["i1"].max()) + 1
        n2 = int(frame["i2"].max()) + 1
        h1 = float(frame["x1"].iloc[0]) / int(frame["i1"].iloc[0])
        h2 = float(frame["x2"].iloc[0]) / int(frame["i2"].iloc[0])
        spec = GridSpec(h1 * n1, h2 * n2, n1, n2)
    values = np.zeros(spec.shape)
    i1 = frame["i1"].to_numpy(dtype=int) - 1
    i2 = frame["i2"].to_numpy(dtype=int) - 1
    if (i1 < 0).any() or (i2 < 0).any() or (i1 >= spec.shape[1]).any() or (
        i2 >= spec.shape[0]
    ).any():
        raise GridMismatchError(f"Node indices in {path} do not fit {spec}")
    values[i2, i1] = frame["value"].to_numpy(dtype=np.float64)

    return Field(spec, values)
