"""
The discrete energy of three-level schemes and trajectory monitoring.

A stable scheme in canonical form conserves

    ||(u[n+1] - u[n]) / tau||_G^2 + ||(u[n+1] + u[n]) / 2||_D^2

exactly, with `G = C - (tau^2 / 4) D`.
"""

import logging
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Optional

import pandas as pd

from pysplit.errors import NotNonNegativeError
from pysplit.lattice import FLOAT_FORMAT, Field, inner_product, norm
from pysplit.linear_map import LinearMap

logger = logging.getLogger(__name__)

ENERGY_COLUMNS = ["n", "t", "kinetic", "potential", "total"]
FORM_TOL = 1e-10
BLOW_UP_NORM = 1e12


@dataclass(frozen=True)
class EnergyRecord:
    """
    Energy of the level pair `(u[n], u[n+1])`.

    Attributes:
        n: The lower level of the pair.
        kinetic: `||(u[n+1] - u[n]) / tau||_G^2`.
        potential: `||(u[n+1] + u[n]) / 2||_D^2`.
        total: Their sum.
    """

    n: int
    kinetic: float
    potential: float
    total: float


def energy(
    u_n: Field, u_np1: Field, g: LinearMap, d: LinearMap, tau: float, n: int = 0
) -> EnergyRecord:
    """
    The discrete energy of a pair of consecutive levels.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> from pysplit.linear_map import identity, scaled
        >>> spec = GridSpec.unit_square(2)
        >>> one = identity(spec)
        >>> record = energy(Field(spec, [2.0]), Field(spec, [2.0 / 2.289]),
        ...                 one, scaled(one, 257.8), 0.1)
        >>> print(f"{record.total:.1f}")
        164.8

    Raises:
        NotNonNegativeError: A quadratic form is negative beyond round-off,
            so the scheme violates its stability condition.
    """
    if tau <= 0:
        raise ValueError(f"Time step must be positive, got {tau}")
    velocity = (u_np1 - u_n) / tau
    mean = (u_np1 + u_n) / 2.0
    kinetic = inner_product(g.apply(velocity), velocity)
    potential = inner_product(d.apply(mean), mean)
    scale = inner_product(velocity, velocity) + abs(kinetic) + abs(potential)
    for name, form in (("G", kinetic), ("D", potential)):
        if form < -FORM_TOL * scale:
            raise NotNonNegativeError(
                f"Energy form of {name} is negative at level {n}: {form:.3e}"
            )

    return EnergyRecord(n, kinetic, potential, kinetic + potential)


def physical_energy(
    u_prev: Field,
    u_curr: Field,
    u_next: Field,
    a: LinearMap,
    b: LinearMap,
    tau: float,
) -> float:
    """
    The plate energy `||w'||^2 + ||A w||^2 + ||w||_B^2` at level `n`, with the
    central difference `(u[n+1] - u[n-1]) / (2 tau)` as velocity.

    Unlike the scheme energy, it is not conserved by the discrete schemes.
    """
    velocity = (u_next - u_prev) / (2 * tau)
    au = a.apply(u_curr)

    return (
        inner_product(velocity, velocity)
        + inner_product(au, au)
        + inner_product(b.apply(u_curr), u_curr)
    )


def relative_drift(records: Iterable[EnergyRecord]) -> float:
    """
    The largest relative deviation of the total energy from its first value.

    Examples:
        >>> records = [EnergyRecord(0, 1.0, 1.0, 2.0), EnergyRecord(1, 0.5, 1.6, 2.1)]
        >>> print(f"{relative_drift(records):.3f}")
        0.050
    """
    totals = [r.total for r in records]
    if not totals:
        return 0.0
    reference = totals[0]
    deviation = max(abs(t - reference) for t in totals)

    return deviation / abs(reference) if reference else deviation


def energy_frame(records: Iterable[EnergyRecord], tau: float) -> pd.DataFrame:
    """Tabulate records as `n, t, kinetic, potential, total`."""
    rows = [(r.n, r.n * tau, r.kinetic, r.potential, r.total) for r in records]

    return pd.DataFrame(rows, columns=ENERGY_COLUMNS)


def write_energy_csv(
    records: Iterable[EnergyRecord], tau: float, path: str | PathLike[str]
) -> None:
    energy_frame(records, tau).to_csv(path, index=False, float_format=FLOAT_FORMAT)


@dataclass
class BoundednessMonitor:
    """
    Watches `max |u[n]|` along a trajectory and flags a blow-up.

    A level blows up when it is not finite or its grid norm exceeds `limit`.
    Flagged runs are stopped by the caller and reported, never crashed.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> spec = GridSpec.unit_square(2)
        >>> monitor = BoundednessMonitor()
        >>> monitor.observe(0, Field(spec, [1.0]))
        True
        >>> monitor.observe(1, Field(spec, [1e13]))
        False
        >>> monitor.blow_up_level
        1
    """

    limit: float = BLOW_UP_NORM
    peak: float = 0.0
    initial: Optional[float] = None
    blow_up_level: Optional[int] = None
    history: list[float] = field(default_factory=list)

    @property
    def blown_up(self) -> bool:
        return self.blow_up_level is not None

    def observe(self, n: int, u: Field) -> bool:
        """Record a level, `False` once the trajectory has blown up."""
        magnitude = u.max_abs()
        self.history.append(magnitude)
        if self.initial is None:
            self.initial = magnitude
        if not u.is_finite() or norm(u) > self.limit:
            if self.blow_up_level is None:
                self.blow_up_level = n
                logger.warning("blow-up at level %d: max |u| = %.3e", n, magnitude)
            return False
        self.peak = max(self.peak, magnitude)

        return True

    def fail(self, n: int) -> None:
        """Flag level `n` as blown up when it could not be computed."""
        if self.blow_up_level is None:
            self.blow_up_level = n

    def growth(self) -> float:
        """The ratio of the largest observed `max |u|` to the initial one."""
        if not self.initial:
            return math.inf if self.peak else 1.0
        if self.blown_up:
            return math.inf

        return self.peak / self.initial

    def bounded_by(self, envelope: float, factor: float = 2.0) -> bool:
        """Whether no blow-up occurred and `max |u| <= factor * envelope` throughout."""
        return not self.blown_up and self.peak <= factor * envelope
