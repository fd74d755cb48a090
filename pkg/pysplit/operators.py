"""
Matrix-free grid operators of the plate problem and their regularizations.

All maps act on interior values with zero extension outside the grid.
The five-point Laplacian is self-adjoint, so `A* = A`, but every construction
goes through `adjoint` so a non-self-adjoint `A` fits the same API.
"""

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

from pysplit.errors import InvalidCoefficientError
from pysplit.krylov import DEFAULT_TOL, cg_solve
from pysplit.lattice import Field, GridSpec
from pysplit.linear_map import (
    Array,
    Composition,
    LinearCombination,
    LinearMap,
    adjoint,
    identity,
    scaled,
    sum_of,
)


class Laplacian(LinearMap):
    """
    The five-point grid Laplacian `A = -Δ_h` with homogeneous Dirichlet data.

    Examples:
        >>> spec = GridSpec(1.0, 1.0, 2, 2)
        >>> Laplacian(spec).apply(Field(spec, [1.0])).values
        array([[16.]])
    """

    def __init__(self, spec: GridSpec, descriptor: str = "A") -> None:
        self.spec = spec
        self.descriptor = descriptor

    def matvec(self, values: Array) -> Array:
        return _second_difference(values, 1, self.spec.h1) + _second_difference(
            values, 2, self.spec.h2
        )


class DirectionalLaplacian(LinearMap):
    """The one-dimensional second difference `A_a` along axis `a` of the grid."""

    def __init__(
        self, spec: GridSpec, axis: Literal[1, 2], descriptor: Optional[str] = None
    ) -> None:
        if axis not in (1, 2):
            raise ValueError(f"Axis must be 1 or 2, got {axis}")
        self.spec = spec
        self.axis = axis
        self.descriptor = descriptor or f"A{axis}"

    def matvec(self, values: Array) -> Array:
        step = self.spec.h1 if self.axis == 1 else self.spec.h2
        return _second_difference(values, self.axis, step)


def _second_difference(values: Array, axis: int, step: float) -> Array:
    # axis 1 runs along x1, the last array dimension
    scale = 1.0 / step**2
    result = 2.0 * scale * values
    if axis == 1:
        result[:, 1:] -= scale * values[:, :-1]
        result[:, :-1] -= scale * values[:, 1:]
    else:
        result[1:, :] -= scale * values[:-1, :]
        result[:-1, :] -= scale * values[1:, :]

    return result


@dataclass(frozen=True)
class PlateCoefficients:
    """
    Elastic foundation coefficients of `B = gamma1 I + gamma2 A`.

    Args:
        gamma1: The foundation reaction modulus.
        gamma2: The shear or membrane tension coefficient.

    Examples:
        >>> PlateCoefficients(-1.0, 0.05)
        Traceback (most recent call last):
        ...
        pysplit.errors.InvalidCoefficientError: gamma1 must be finite and non-negative, got -1.0
    """

    gamma1: float = 1.0
    gamma2: float = 0.05

    def __post_init__(self) -> None:
        for name in ("gamma1", "gamma2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidCoefficientError(
                    f"{name} must be finite and non-negative, got {value}"
                )


class ShiftedInverse(LinearMap):
    """
    The resolvent `(I + mu L)^-1`, applied by conjugate gradients.

    Every application solves one system named `"I + <mu>·<L>"`.
    """

    def __init__(
        self,
        operator: LinearMap,
        mu: float,
        tol: float = DEFAULT_TOL,
        max_iter: Optional[int] = None,
    ) -> None:
        if not (math.isfinite(mu) and mu >= 0):
            raise InvalidCoefficientError(f"Shift mu must be non-negative, got {mu}")
        self.operator = operator
        self.mu = mu
        self.tol = tol
        self.max_iter = max_iter
        self.spec = operator.spec
        self.system = LinearCombination(
            [(1.0, identity(operator.spec)), (mu, operator)],
            descriptor=f"I + {mu:.6g}·{operator.descriptor}",
        )
        self.descriptor = f"({self.system.descriptor})⁻¹"

    def matvec(self, values: Array) -> Array:
        if self.mu == 0.0:
            return values.copy()
        solution, _ = cg_solve(
            self.system, Field(self.spec, values), self.tol, self.max_iter
        )

        return solution.values


def laplacian(spec: GridSpec) -> LinearMap:
    """The five-point Laplacian `A` on `spec`."""
    return Laplacian(spec)


def laplacian_directional(spec: GridSpec, axis: Literal[1, 2]) -> LinearMap:
    """The directional part `A_axis` with `A = A_1 + A_2`."""
    return DirectionalLaplacian(spec, axis)


def foundation_operator(
    operator: LinearMap, coefficients: PlateCoefficients
) -> LinearMap:
    """
    The foundation operator `B = gamma1 I + gamma2 A`.

    Raises:
        InvalidCoefficientError: A coefficient is negative.
    """
    gamma1, gamma2 = coefficients.gamma1, coefficients.gamma2
    if gamma1 < 0 or gamma2 < 0:
        raise InvalidCoefficientError("Foundation coefficients must be non-negative")

    return LinearCombination(
        [(gamma1, identity(operator.spec)), (gamma2, operator)], descriptor="B"
    )


def compose(maps: Sequence[LinearMap], descriptor: Optional[str] = None) -> LinearMap:
    """
    The product of `maps`, the rightmost factor acts first.

    Examples:
        >>> spec = GridSpec(1.0, 1.0, 2, 2)
        >>> a = laplacian(spec)
        >>> product = compose([adjoint(a), a])
        >>> product.descriptor, product.apply(Field(spec, [1.0])).values
        ('A*·A', array([[256.]]))
    """
    return Composition(maps, descriptor)


def shifted_inverse(
    operator: LinearMap,
    mu: float,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> LinearMap:
    """
    The map `u -> y` with `(I + mu L) y = u`, solved to relative residual `tol`.

    Raises:
        InvalidCoefficientError: `mu` is negative.
    """
    return ShiftedInverse(operator, mu, tol, max_iter)


def regularized_resolvent(
    operator: LinearMap,
    mu: float,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    descriptor: Optional[str] = None,
) -> LinearMap:
    """The multiplicatively regularized map `(I + mu L)^-1 L`."""
    return Composition(
        [shifted_inverse(operator, mu, tol, max_iter), operator],
        descriptor or f"{operator.descriptor}~",
    )


def regularized_product(
    operator: LinearMap,
    sigma_a: float,
    tau: float,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    descriptor: str = "(A*A)~",
) -> LinearMap:
    """
    The factor-wise regularized product
    `(I + sigma_a tau A*)^-1 A* A (I + sigma_a tau A)^-1`.

    One application solves once with `I + sigma_a tau A` and once with
    `I + sigma_a tau A*`, never with a system containing `A* A`.
    """
    _check_weight("sigma_a", sigma_a)
    _check_weight("tau", tau)
    mu = sigma_a * tau
    star = adjoint(operator)

    return Composition(
        [
            shifted_inverse(star, mu, tol, max_iter),
            star,
            operator,
            shifted_inverse(operator, mu, tol, max_iter),
        ],
        descriptor,
    )


def regularized_sum_product(
    parts: Sequence[LinearMap],
    sigma_a: float,
    tau: float,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    descriptor: str = "(A*A)~",
) -> LinearMap:
    """
    The regularization `(sum_a A~*_a)(sum_a A~_a)` of `A* A` for `A = sum_a A_a`,
    with `A~_a = (I + sigma_a tau A_a)^-1 A_a`.
    """
    _check_weight("sigma_a", sigma_a)
    _check_weight("tau", tau)
    if not parts:
        raise ValueError("At least one part is required")
    mu = sigma_a * tau
    regularized = []
    regularized_star = []
    for part in parts:
        star = adjoint(part)
        regularized.append(
            Composition(
                [shifted_inverse(part, mu, tol, max_iter), part],
                f"{part.descriptor}~",
            )
        )
        regularized_star.append(
            Composition(
                [star, shifted_inverse(star, mu, tol, max_iter)],
                f"{part.descriptor}~*",
            )
        )

    return Composition([sum_of(regularized_star), sum_of(regularized)], descriptor)


def regularized_factor_sum(
    factors: Sequence[LinearMap],
    sigma_a: float,
    tau: float,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    descriptor: str = "(A*A)~",
) -> LinearMap:
    """
    The regularization of `A* A = sum_a A*_a A_a` given by

        sum_a (I + sigma_a tau A*_a)^-1 A*_a A_a (I + sigma_a tau A_a)^-1.
    """
    if not factors:
        raise ValueError("At least one factor is required")

    return sum_of(
        [
            regularized_product(f, sigma_a, tau, tol, max_iter, f"({f.descriptor})~")
            for f in factors
        ],
        descriptor,
    )


def uniform_factors(operator: LinearMap, p: int) -> list[LinearMap]:
    """
    Split `A* A` into `p` equal terms `A*_a A_a` with `A_a = A / sqrt(p)`.

    Examples:
        >>> spec = GridSpec(1.0, 1.0, 4, 4)
        >>> [f.descriptor for f in uniform_factors(laplacian(spec), 2)]
        ['A_1', 'A_2']
    """
    if p < 1:
        raise ValueError(f"Split count must be at least 1, got {p}")

    return [
        scaled(operator, 1.0 / math.sqrt(p), f"{operator.descriptor}_{alpha}")
        for alpha in range(1, p + 1)
    ]


def foundation_parts(
    operator: LinearMap, coefficients: PlateCoefficients
) -> list[LinearMap]:
    """
    Split `B` into its non-vanishing terms `gamma1 I` and `gamma2 A`.

    A vanishing coefficient drops its term, so `B = gamma1 I` is a
    single-part split.
    """
    parts: list[LinearMap] = []
    if coefficients.gamma1 > 0:
        parts.append(
            scaled(identity(operator.spec), coefficients.gamma1, "B_1")
        )
    if coefficients.gamma2 > 0:
        parts.append(scaled(operator, coefficients.gamma2, "B_2"))

    return parts


@dataclass(frozen=True)
class PlateOperators:
    """
    The operator set of the plate problem on one grid.

    Attributes:
        spec: The grid.
        coefficients: The foundation coefficients.
        a: The Laplacian `A`.
        directional: The directional parts `(A_1, A_2)`.
        b: The foundation operator `B`.
        q: The full operator `Q = A* A + B`.
    """

    spec: GridSpec
    coefficients: PlateCoefficients
    a: LinearMap
    directional: tuple[LinearMap, LinearMap]
    b: LinearMap
    q: LinearMap

    @property
    def a_star_a(self) -> LinearMap:
        return Composition([adjoint(self.a), self.a])


def plate_operators(
    spec: GridSpec, coefficients: Optional[PlateCoefficients] = None
) -> PlateOperators:
    """Assemble `A`, its directional split, `B` and `Q = A* A + B`."""
    coefficients = coefficients or PlateCoefficients()
    a = laplacian(spec)
    b = foundation_operator(a, coefficients)
    q = sum_of([Composition([adjoint(a), a]), b], descriptor="Q")

    return PlateOperators(
        spec=spec,
        coefficients=coefficients,
        a=a,
        directional=(laplacian_directional(spec, 1), laplacian_directional(spec, 2)),
        b=b,
        q=q,
    )


def _check_weight(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise InvalidCoefficientError(f"{name} must be positive, got {value}")

