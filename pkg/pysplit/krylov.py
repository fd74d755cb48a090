"""
Conjugate gradients for the symmetric positive definite shifted systems
`(I + mu L) y = f` that every implicit and regularized scheme solves.
"""

import contextlib
import logging
import math
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from pysplit.errors import IterationLimitError, NumericalBreakdownError
from pysplit.lattice import Field
from pysplit.linear_map import LinearMap

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class SolveReport:
    """
    Outcome of one iterative solve.

    Args:
        iterations: Number of CG iterations performed.
        final_relative_residual: `||L y - f|| / ||f||` at exit.
        converged: Whether the requested tolerance was reached.
    """

    iterations: int
    final_relative_residual: float
    converged: bool


@dataclass(frozen=True)
class SolveRecord:
    descriptor: str
    report: SolveReport


_recorders: ContextVar[tuple[list[SolveRecord], ...]] = ContextVar(
    "pysplit_solve_recorders", default=()
)


@contextlib.contextmanager
def record_solves() -> Iterator[list[SolveRecord]]:
    """
    Collect every solve performed in the current context.

    Recorders nest, each one sees all solves of its block.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> from pysplit.linear_map import identity
        >>> spec = GridSpec(1.0, 1.0, 4, 4)
        >>> with record_solves() as records:
        ...     _ = cg_solve(identity(spec), Field(spec, np.ones(9)))
        >>> [(r.descriptor, r.report.iterations) for r in records]
        [('I', 1)]
    """
    records: list[SolveRecord] = []
    token = _recorders.set(_recorders.get() + (records,))
    try:
        yield records
    finally:
        _recorders.reset(token)


def default_max_iter(dimension: int) -> int:
    """The iteration cap `10 sqrt(n) + 100` for an `n`-dimensional system."""
    return int(10 * math.sqrt(dimension)) + 100


def cg_solve(
    operator: LinearMap,
    rhs: Field,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> tuple[Field, SolveReport]:
    """
    Solve `L y = rhs` for a self-adjoint positive definite map `L`.

    The iteration starts from zero and stops once the relative residual
    `||L y - rhs|| / ||rhs||` drops to `tol`.
    A zero right-hand side returns zero without iterating.

    Args:
        operator: The map `L`.
        rhs: The right-hand side.
        tol: The relative residual to reach.
        max_iter: The iteration cap, `10 sqrt(n) + 100` by default.

    Returns:
        The solution and the solve report.

    Raises:
        IterationLimitError: The cap was hit, the report is attached.
        NumericalBreakdownError: A NaN or a non-positive curvature occurred.
    """
    if tol <= 0:
        raise ValueError("Tolerance must be positive")
    operator._check(rhs.spec)
    if max_iter is None:
        max_iter = default_max_iter(rhs.spec.size)

    b = rhs.values
    b_norm = float(np.linalg.norm(b))
    if not math.isfinite(b_norm):
        raise NumericalBreakdownError(
            f"Right-hand side for {operator.descriptor} is not finite"
        )
    if b_norm == 0.0:
        report = SolveReport(0, 0.0, True)
        _publish(operator, report)
        return Field.zeros(rhs.spec), report

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r))
    relative = 1.0
    iterations = 0
    while iterations < max_iter:
        lp = operator.matvec(p)
        curvature = float(np.vdot(p, lp))
        if not math.isfinite(curvature) or curvature <= 0.0:
            raise NumericalBreakdownError(
                f"CG breakdown for {operator.descriptor} at iteration {iterations}: "
                f"curvature {curvature}"
            )
        alpha = rs / curvature
        x += alpha * p
        r -= alpha * lp
        rs_next = float(np.vdot(r, r))
        iterations += 1
        relative = math.sqrt(rs_next) / b_norm
        if not math.isfinite(relative):
            raise NumericalBreakdownError(
                f"CG residual for {operator.descriptor} is not finite"
            )
        if relative <= tol:
            break
        p = r + (rs_next / rs) * p
        rs = rs_next

    report = SolveReport(iterations, relative, relative <= tol)
    _publish(operator, report)
    if not report.converged:
        raise IterationLimitError(
            f"CG for {operator.descriptor} stopped after {iterations} iterations "
            f"at relative residual {relative:.3e} > {tol:.1e}",
            report,
        )

    return Field(rhs.spec, x), report


def _publish(operator: LinearMap, report: SolveReport) -> None:
    logger.debug(
        "solve %s: %d iterations, residual %.3e",
        operator.descriptor,
        report.iterations,
        report.final_relative_residual,
    )
    record = SolveRecord(operator.descriptor, report)
    for records in _recorders.get():
        records.append(record)
