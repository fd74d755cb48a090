from abc import ABC, abstractmethod
from typing import Iterable, Optional, Sequence

import numpy as np
from frozenlist import FrozenList
from numpy.typing import NDArray

from pysplit.errors import GridMismatchError
from pysplit.lattice import Field, GridSpec

Array = NDArray[np.float64]


class LinearMap(ABC):
    """
    A linear operator acting on grid functions of one grid.

    Subclasses implement `matvec` on raw interior value arrays.
    Maps are self-adjoint unless they override `rmatvec`.
    Iterative solvers work on arrays directly, user code calls `apply`.

    Attributes:
        spec: The grid of the argument and result fields.
        descriptor: A symbolic name used in logs and reports.
    """

    spec: GridSpec
    descriptor: str

    @abstractmethod
    def matvec(self, values: Array) -> Array:
        pass

    def rmatvec(self, values: Array) -> Array:
        return self.matvec(values)

    def apply(self, u: Field) -> Field:
        self._check(u.spec)
        return Field(self.spec, self.matvec(u.values))

    def adjoint_apply(self, u: Field) -> Field:
        self._check(u.spec)
        return Field(self.spec, self.rmatvec(u.values))

    def __call__(self, u: Field) -> Field:
        return self.apply(u)

    def _check(self, spec: GridSpec) -> None:
        if spec != self.spec:
            raise GridMismatchError(
                f"Map {self.descriptor} acts on {self.spec}, got a field on {spec}"
            )

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.descriptor!r})"


class Identity(LinearMap):
    def __init__(self, spec: GridSpec, descriptor: str = "I") -> None:
        self.spec = spec
        self.descriptor = descriptor

    def matvec(self, values: Array) -> Array:
        return values.copy()


class Zero(LinearMap):
    def __init__(self, spec: GridSpec, descriptor: str = "0") -> None:
        self.spec = spec
        self.descriptor = descriptor

    def matvec(self, values: Array) -> Array:
        return np.zeros_like(values)


class Adjoint(LinearMap):
    """The adjoint `L*` of a map, named `"<L>*"`."""

    def __init__(self, operator: LinearMap, descriptor: Optional[str] = None) -> None:
        self.operator = operator
        self.spec = operator.spec
        self.descriptor = descriptor or f"{operator.descriptor}*"

    def matvec(self, values: Array) -> Array:
        return self.operator.rmatvec(values)

    def rmatvec(self, values: Array) -> Array:
        return self.operator.matvec(values)


class LinearCombination(LinearMap):
    """
    A weighted sum `sum(c_i L_i)` of maps on one grid.

    Args:
        terms: Pairs of coefficient and map.
        descriptor: Optional name, defaults to the written-out sum.
    """

    def __init__(
        self,
        terms: Iterable[tuple[float, LinearMap]],
        descriptor: Optional[str] = None,
    ) -> None:
        self.terms: FrozenList[tuple[float, LinearMap]] = FrozenList(
            (float(c), m) for c, m in terms
        )
        self.terms.freeze()
        if not self.terms:
            raise ValueError("A linear combination needs at least one term")
        self.spec = _common_spec(m for _, m in self.terms)
        self.descriptor = descriptor or " + ".join(
            m.descriptor if c == 1.0 else f"{c:.6g}·{m.descriptor}"
            for c, m in self.terms
        )

    def matvec(self, values: Array) -> Array:
        result = np.zeros_like(values)
        for c, m in self.terms:
            if c != 0.0:
                result += c * m.matvec(values)

        return result

    def rmatvec(self, values: Array) -> Array:
        result = np.zeros_like(values)
        for c, m in self.terms:
            if c != 0.0:
                result += c * m.rmatvec(values)

        return result


class Composition(LinearMap):
    """
    The product `L_1 L_2 ... L_k` of maps, applied right to left.

    Args:
        factors: The factors in written order.
        descriptor: Optional name, defaults to the factor names joined by `·`.
    """

    def __init__(
        self, factors: Sequence[LinearMap], descriptor: Optional[str] = None
    ) -> None:
        self.factors: FrozenList[LinearMap] = FrozenList(factors)
        self.factors.freeze()
        if not self.factors:
            raise ValueError("A composition needs at least one factor")
        self.spec = _common_spec(self.factors)
        self.descriptor = descriptor or "·".join(f.descriptor for f in self.factors)

    def matvec(self, values: Array) -> Array:
        for factor in reversed(self.factors):
            values = factor.matvec(values)

        return values

    def rmatvec(self, values: Array) -> Array:
        for factor in self.factors:
            values = factor.rmatvec(values)

        return values


def identity(spec: GridSpec) -> LinearMap:
    return Identity(spec)


def zero_map(spec: GridSpec) -> LinearMap:
    return Zero(spec)


def adjoint(operator: LinearMap) -> LinearMap:
    return Adjoint(operator)


def scaled(
    operator: LinearMap, coefficient: float, descriptor: Optional[str] = None
) -> LinearMap:
    return LinearCombination([(coefficient, operator)], descriptor)


def sum_of(maps: Sequence[LinearMap], descriptor: Optional[str] = None) -> LinearMap:
    return LinearCombination([(1.0, m) for m in maps], descriptor)


def _common_spec(maps: Iterable[LinearMap]) -> GridSpec:
    specs = {m.spec for m in maps}
    if len(specs) != 1:
        raise GridMismatchError(f"Maps live on different grids: {specs}")

    return specs.pop()
