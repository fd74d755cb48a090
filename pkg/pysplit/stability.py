"""
Stability thresholds and dense verification of the three-level stability
condition `G = C - (tau^2 / 4) D >= 0` for schemes written as

    C (u[n+1] - 2 u[n] + u[n-1]) / tau^2 + D u[n] = 0.
"""

import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np
from frozendict import frozendict
from scipy import linalg

from pysplit.errors import (
    DimensionTooLargeError,
    IterationLimitError,
    NotNonNegativeError,
)
from pysplit.linear_map import (
    Adjoint,
    Array,
    Composition,
    Identity,
    LinearCombination,
    LinearMap,
)
from pysplit.operators import ShiftedInverse

if TYPE_CHECKING:
    from pysplit.steppers import SchemeConfig

logger = logging.getLogger(__name__)

DEFAULT_DIM_CAP = 1024
EIGENVALUE_TOL = 1e-10
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class Weights:
    """Scheme weights, `None` where a scheme has no such weight."""

    sigma: Optional[float] = None
    sigma_a: Optional[float] = None
    sigma_b: Optional[float] = None

    def scaled(self, factor: float) -> "Weights":
        """
        Scale `sigma`, `sigma_b` and `sigma_a^2` by `factor`.

        Examples:
            >>> w = Weights(sigma_a=math.sqrt(0.5), sigma_b=0.5).scaled(0.9)
            >>> print(f"{w.sigma_a ** 2:.3f} {w.sigma_b:.3f}")
            0.450 0.450
        """
        return Weights(
            sigma=None if self.sigma is None else self.sigma * factor,
            sigma_a=None if self.sigma_a is None else self.sigma_a * math.sqrt(factor),
            sigma_b=None if self.sigma_b is None else self.sigma_b * factor,
        )


# smallest weights that make each scheme unconditionally stable, given the split count p
THRESHOLD_WEIGHTS: frozendict[str, Callable[[int], Weights]] = frozendict(
    {
        "explicit": lambda p: Weights(),
        "weighted": lambda p: Weights(sigma=0.25),
        "regularized_q": lambda p: Weights(sigma=0.25),
        "additive_averaged": lambda p: Weights(sigma=p / 4 + 1e-12),
        "split_product": lambda p: Weights(sigma_a=math.sqrt(0.5), sigma_b=0.5),
        "split_product_bsplit": lambda p: Weights(
            sigma_a=math.sqrt(0.5), sigma_b=p / 2
        ),
        "split_product_aasplit": lambda p: Weights(
            sigma_a=math.sqrt(p / 2), sigma_b=0.5
        ),
        "split_factor_sum": lambda p: Weights(sigma_a=p / math.sqrt(2), sigma_b=0.5),
    }
)


def threshold_weights(scheme: str, p: int = 1) -> Weights:
    """
    The stability threshold weights of a scheme.

    Examples:
        >>> print(f"{threshold_weights('split_factor_sum', 2).sigma_a ** 2:.6f}")
        2.000000
    """
    if scheme not in THRESHOLD_WEIGHTS:
        raise ValueError(f"Unknown scheme {scheme!r}")

    return THRESHOLD_WEIGHTS[scheme](p)


def meets_threshold(scheme: str, weights: Weights, p: int = 1) -> bool:
    """Whether `weights` satisfy the sufficient unconditional stability conditions."""
    if scheme == "explicit":
        return False
    bound = threshold_weights(scheme, p)
    slack = 1e-12
    if bound.sigma is not None and (weights.sigma or 0.0) < bound.sigma - slack:
        return False
    if (
        bound.sigma_a is not None
        and (weights.sigma_a or 0.0) ** 2 < bound.sigma_a**2 - slack
    ):
        return False
    if bound.sigma_b is not None and (weights.sigma_b or 0.0) < bound.sigma_b - slack:
        return False

    return True


def expected_stable(cfg: "SchemeConfig", p: int, tau_0: Optional[float]) -> bool:
    """
    Whether theory promises a bounded run: explicit runs need `tau <= tau_0`,
    all other schemes need threshold weights.
    """
    if cfg.scheme == "explicit":
        return tau_0 is not None and cfg.tau <= tau_0

    return meets_threshold(cfg.scheme, cfg.weights(p), p)


@dataclass(frozen=True)
class StabilityVerdict:
    """
    Result of the dense stability check.

    Attributes:
        g_min_eigenvalue: The smallest eigenvalue of `G = C - (tau^2 / 4) D`.
        condition_holds: Whether `G >= 0` up to `-1e-10` times the scale of `C`.
        tau_0: The explicit-scheme step bound `2 / ||D||^(1/2)`, if computed.
    """

    g_min_eigenvalue: float
    condition_holds: bool
    tau_0: Optional[float] = None


def operator_norm(
    operator: LinearMap, tol: float = 1e-10, max_iter: int = 20000
) -> float:
    """
    The largest eigenvalue of a self-adjoint non-negative map by power iteration.

    The start vector is the grid checkerboard, which is dominated by the
    highest-frequency modes of stencil operators, plus a small seeded
    perturbation so that no eigenvector is missed.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> from pysplit.operators import laplacian
        >>> print(f"{operator_norm(laplacian(GridSpec.unit_square(4))):.3f}")
        109.255

    Raises:
        IterationLimitError: The Rayleigh quotient did not settle.
    """
    spec = operator.spec
    i2, i1 = np.indices(spec.shape)
    x = np.where((i1 + i2) % 2 == 0, 1.0, -1.0)
    x = x + 1e-3 * np.random.default_rng(0).standard_normal(spec.shape)
    x /= np.linalg.norm(x)
    rayleigh = 0.0
    for iteration in range(1, max_iter + 1):
        y = operator.matvec(x)
        previous, rayleigh = rayleigh, float(np.vdot(x, y))
        y_norm = float(np.linalg.norm(y))
        if y_norm == 0.0:
            return 0.0
        x = y / y_norm
        if iteration > 1 and abs(rayleigh - previous) <= tol * abs(rayleigh):
            logger.debug(
                "norm of %s: %.12g after %d iterations",
                operator.descriptor,
                rayleigh,
                iteration,
            )
            return rayleigh

    raise IterationLimitError(
        f"Power iteration for {operator.descriptor} did not settle in {max_iter} steps"
    )


def explicit_threshold(q: LinearMap, tol: float = 1e-10) -> float:
    """
    The step bound `tau_0 = 2 / ||Q||^(1/2)` of the explicit scheme.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> from pysplit.linear_map import identity
        >>> explicit_threshold(identity(GridSpec.unit_square(4)))
        2.0
    """
    return 2.0 / math.sqrt(operator_norm(q, tol))


def dense_matrix(operator: LinearMap, dim_cap: int = DEFAULT_DIM_CAP) -> Array:
    """
    Assemble the matrix of a map.

    Stencil maps are applied to basis vectors column by column. Sums,
    products and adjoints are assembled from their parts, and resolvents
    `(I + mu L)^-1` by a dense Cholesky solve, so the result carries no
    iterative solver error.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> from pysplit.operators import laplacian, regularized_resolvent
        >>> a = laplacian(GridSpec.unit_square(2))
        >>> dense_matrix(regularized_resolvent(a, 0.0625))
        array([[8.]])

    Raises:
        DimensionTooLargeError: The grid has more than `dim_cap` unknowns.
    """
    n = operator.spec.size
    if n > dim_cap:
        raise DimensionTooLargeError(
            f"Dense assembly of {operator.descriptor} needs {n} > {dim_cap} unknowns"
        )

    return _assemble(operator)


def _assemble(operator: LinearMap) -> Array:
    n = operator.spec.size
    if isinstance(operator, Identity):
        return np.eye(n)
    if isinstance(operator, LinearCombination):
        matrix = np.zeros((n, n))
        for c, m in operator.terms:
            if c != 0.0:
                matrix += c * _assemble(m)
        return matrix
    if isinstance(operator, Composition):
        return reduce(np.matmul, [_assemble(f) for f in operator.factors])
    if isinstance(operator, Adjoint):
        return _assemble(operator.operator).T
    if isinstance(operator, ShiftedInverse):
        system = np.eye(n) + operator.mu * _assemble(operator.operator)
        return linalg.solve(system, np.eye(n), assume_a="pos")

    matrix = np.empty((n, n))
    basis = np.zeros(n)
    for j in range(n):
        basis[j] = 1.0
        matrix[:, j] = operator.matvec(basis.reshape(operator.spec.shape)).ravel()
        basis[j] = 0.0

    return matrix


def check_lemma1(
    c: LinearMap, d: LinearMap, tau: float, dim_cap: int = DEFAULT_DIM_CAP
) -> StabilityVerdict:
    """
    Check `G = C - (tau^2 / 4) D >= 0` on dense matrices.

    `C` and `D` are verified to be symmetric and non-negative first.
    The verdict also carries `tau_0 = 2 / ||D||^(1/2)`.

    Raises:
        DimensionTooLargeError: The grid exceeds `dim_cap` unknowns.
        NotNonNegativeError: `C` or `D` is not symmetric non-negative.
    """
    if tau < 0:
        raise ValueError(f"Time step must be non-negative, got {tau}")
    c_matrix = _symmetric(dense_matrix(c, dim_cap), c.descriptor)
    d_matrix = _symmetric(dense_matrix(d, dim_cap), d.descriptor)
    c_eigenvalues = linalg.eigvalsh(c_matrix)
    d_eigenvalues = linalg.eigvalsh(d_matrix)
    c_scale = max(float(np.max(np.abs(c_eigenvalues))), 1.0)
    if c_eigenvalues[0] < -EIGENVALUE_TOL * c_scale:
        raise NotNonNegativeError(
            f"{c.descriptor} has eigenvalue {c_eigenvalues[0]:.3e}"
        )
    d_scale = max(float(np.max(np.abs(d_eigenvalues))), 1.0)
    if d_eigenvalues[0] < -EIGENVALUE_TOL * d_scale:
        raise NotNonNegativeError(
            f"{d.descriptor} has eigenvalue {d_eigenvalues[0]:.3e}"
        )

    g_min = float(linalg.eigvalsh(c_matrix - tau**2 / 4 * d_matrix)[0])
    d_max = float(d_eigenvalues[-1])
    tau_0 = 2.0 / math.sqrt(d_max) if d_max > 0 else None

    return StabilityVerdict(
        g_min_eigenvalue=g_min,
        condition_holds=g_min >= -EIGENVALUE_TOL * c_scale,
        tau_0=tau_0,
    )


def _symmetric(matrix: Array, descriptor: str) -> Array:
    scale = max(float(np.max(np.abs(matrix))), 1.0)
    asymmetry = float(np.max(np.abs(matrix - matrix.T)))
    if asymmetry > SYMMETRY_TOL * scale:
        raise NotNonNegativeError(
            f"{descriptor} is not symmetric: "
            f"defect {asymmetry:.3e} at scale {scale:.3e}"
        )

    return (matrix + matrix.T) / 2
