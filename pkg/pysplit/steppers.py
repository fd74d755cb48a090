"""
Three-level time stepping for `w'' + A* A w + B w = 0`.

Every scheme is written in the explicit-update form

    u[n+1] = 2 u[n] - u[n-1] - tau^2 D~ u[n],

where the map `D~` hides all inner solves. The weighted scheme also keeps
its direct implicit form as a cross-check.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextvars import copy_context
from dataclasses import dataclass, replace
from typing import Iterator, Literal, Optional, Sequence, get_args

from pysplit.errors import (
    InvalidCoefficientError,
    IterationLimitError,
    NumericalBreakdownError,
    StepError,
)
from pysplit.krylov import cg_solve
from pysplit.lattice import Field
from pysplit.linear_map import (
    LinearCombination,
    LinearMap,
    identity,
    sum_of,
    zero_map,
)
from pysplit.operators import (
    PlateOperators,
    foundation_parts,
    regularized_factor_sum,
    regularized_product,
    regularized_resolvent,
    regularized_sum_product,
    shifted_inverse,
    uniform_factors,
)
from pysplit.stability import Weights, threshold_weights

logger = logging.getLogger(__name__)

SchemeName = Literal[
    "explicit",
    "weighted",
    "regularized_q",
    "additive_averaged",
    "split_product",
    "split_product_bsplit",
    "split_product_aasplit",
    "split_factor_sum",
]
SCHEMES: tuple[str, ...] = get_args(SchemeName)
SPLIT_SCHEMES = frozenset(
    {
        "split_product",
        "split_product_bsplit",
        "split_product_aasplit",
        "split_factor_sum",
    }
)


@dataclass(frozen=True)
class SchemeConfig:
    """
    Time stepping parameters.

    Weights left as `None` default to the scheme's stability threshold.

    Args:
        scheme: The scheme name.
        tau: The time step.
        final_time: The final time `T`, a multiple of `tau`.
        sigma: Weight of the weighted, regularized and additive schemes.
        sigma_a: Weight of the regularization of `A* A`.
        sigma_b: Weight of the regularization of `B`.
        p: Split count of `A* A` for `split_product_aasplit`.
        solver_tol: Relative residual of every inner solve.
        solver_max_iter: CG iteration cap, twice the grid dimension by default.
        workers: Threads running the sub-steps of the additive scheme.

    Examples:
        >>> SchemeConfig("weighted", tau=0.005, final_time=0.5).steps
        100
        >>> SchemeConfig("weighted", tau=0.003, final_time=0.01)
        Traceback (most recent call last):
        ...
        ValueError: Final time 0.01 is not a multiple of tau 0.003
    """

    scheme: SchemeName = "weighted"
    tau: float = 0.005
    final_time: float = 0.5
    sigma: Optional[float] = None
    sigma_a: Optional[float] = None
    sigma_b: Optional[float] = None
    p: int = 2
    solver_tol: float = 1e-10
    solver_max_iter: Optional[int] = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(
                f"Unknown scheme {self.scheme!r}, expected one of {SCHEMES}"
            )
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"Time step must be positive, got {self.tau}")
        if not (math.isfinite(self.final_time) and self.final_time >= self.tau):
            raise ValueError(
                f"Final time {self.final_time} must be at least tau {self.tau}"
            )
        steps = round(self.final_time / self.tau)
        if abs(steps * self.tau - self.final_time) > 1e-12 * self.final_time:
            raise ValueError(
                f"Final time {self.final_time} is not a multiple of tau {self.tau}"
            )
        for name in ("sigma", "sigma_a", "sigma_b"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value >= 0):
                raise InvalidCoefficientError(
                    f"{name} must be finite and non-negative, got {value}"
                )
        if self.p < 1:
            raise ValueError(f"Split count must be at least 1, got {self.p}")
        if self.solver_tol <= 0:
            raise ValueError(
                f"Solver tolerance must be positive, got {self.solver_tol}"
            )
        if self.workers < 1:
            raise ValueError(f"Worker count must be at least 1, got {self.workers}")

    @property
    def steps(self) -> int:
        """The number of steps `N = T / tau`."""
        return round(self.final_time / self.tau)

    def weights(self, p: int = 1) -> Weights:
        """The configured weights, thresholds for `p` parts filling the gaps."""
        threshold = threshold_weights(self.scheme, p)
        return Weights(
            sigma=self.sigma if self.sigma is not None else threshold.sigma,
            sigma_a=self.sigma_a if self.sigma_a is not None else threshold.sigma_a,
            sigma_b=self.sigma_b if self.sigma_b is not None else threshold.sigma_b,
        )

    def with_tau(self, tau: float) -> "SchemeConfig":
        return replace(self, tau=tau)

    def max_iter(self, dimension: int) -> int:
        # (I + sigma tau^2 A* A) is badly conditioned
        if self.solver_max_iter is not None:
            return self.solver_max_iter
        return 2 * dimension


@dataclass(frozen=True)
class ThreeLevelState:
    """
    Two consecutive levels `u[n-1]`, `u[n]` of a trajectory.

    Raises:
        GridMismatchError: The levels live on different grids.
    """

    u_prev: Field
    u_curr: Field
    n: int

    def __post_init__(self) -> None:
        self.u_prev._check(self.u_curr)
        if self.n < 1:
            raise ValueError(f"Level index must be at least 1, got {self.n}")

    def time(self, tau: float) -> float:
        return self.n * tau


def initialize(
    w0: Field, w0_dot: Optional[Field], q: LinearMap, cfg: SchemeConfig
) -> ThreeLevelState:
    """
    The first two levels: `u[0] = w0` and `u[1]` solving
    `(I + tau^2 / 2 Q) u[1] = w0 + tau w0_dot`.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> from pysplit.operators import plate_operators
        >>> spec = GridSpec.unit_square(2)
        >>> cfg = SchemeConfig("weighted", tau=0.1, final_time=1.0)
        >>> state = initialize(Field(spec, [1.0]), None, plate_operators(spec).q, cfg)
        >>> print(f"{state.u_curr.values[0, 0]:.6f}")
        0.436872
    """
    rhs = w0 if w0_dot is None else w0 + w0_dot * cfg.tau
    start = shifted_inverse(
        q, cfg.tau**2 / 2, cfg.solver_tol, cfg.max_iter(w0.spec.size)
    )

    return ThreeLevelState(w0, start.apply(rhs), 1)


def advance(state: ThreeLevelState, d_tilde: LinearMap, tau: float) -> ThreeLevelState:
    """The common update `u[n+1] = 2 u[n] - u[n-1] - tau^2 D~ u[n]`."""
    u_next = state.u_curr * 2.0 - state.u_prev - d_tilde.apply(state.u_curr) * tau**2

    return ThreeLevelState(state.u_curr, u_next, state.n + 1)


def explicit_step(
    state: ThreeLevelState, q: LinearMap, cfg: SchemeConfig
) -> ThreeLevelState:
    return advance(state, q, cfg.tau)


def weighted_step(
    state: ThreeLevelState, q: LinearMap, cfg: SchemeConfig
) -> ThreeLevelState:
    """
    One step of the weighted scheme in its implicit form

        (I + sigma tau^2 Q) u[n+1]
            = (2 I - (1 - 2 sigma) tau^2 Q) u[n] - (I + sigma tau^2 Q) u[n-1].
    """
    sigma = cfg.weights().sigma or 0.0
    tau2 = cfg.tau**2
    q_curr = q.apply(state.u_curr)
    q_prev = q.apply(state.u_prev)
    rhs = (
        state.u_curr * 2.0
        - q_curr * ((1 - 2 * sigma) * tau2)
        - state.u_prev
        - q_prev * (sigma * tau2)
    )
    if sigma == 0.0:
        return ThreeLevelState(state.u_curr, rhs, state.n + 1)

    system = LinearCombination(
        [(1.0, identity(q.spec)), (sigma * tau2, q)],
        descriptor=f"I + {sigma * tau2:.6g}·{q.descriptor}",
    )
    u_next, _ = cg_solve(system, rhs, cfg.solver_tol, cfg.max_iter(q.spec.size))

    return ThreeLevelState(state.u_curr, u_next, state.n + 1)


def regularized_q_step(
    state: ThreeLevelState, q: LinearMap, cfg: SchemeConfig
) -> ThreeLevelState:
    """One step with `D~ = (I + mu Q)^-1 Q`, `mu = sigma tau^2`."""
    return advance(state, _regularized_q(q, cfg), cfg.tau)


def additive_averaged_step(
    state: ThreeLevelState, parts: Sequence[LinearMap], cfg: SchemeConfig
) -> ThreeLevelState:
    """
    One additive-averaged step for `Q = sum_a Q_a`.

    Each of the `p` independent sub-steps
    `u_a = 2 u[n] - u[n-1] - p tau^2 (I + mu Q_a)^-1 Q_a u[n]` is solved
    separately and `u[n+1]` is their mean, which equals the direct update
    with `D~ = sum_a (I + mu Q_a)^-1 Q_a`. The sub-steps run on
    `cfg.workers` threads and are averaged in part order.
    """
    if not parts:
        raise ValueError("At least one part is required")
    p = len(parts)
    regularized = _regularized_parts(parts, cfg)
    base = state.u_curr * 2.0 - state.u_prev
    scale = p * cfg.tau**2

    def sub_step(part: LinearMap) -> Field:
        return base - part.apply(state.u_curr) * scale

    if cfg.workers > 1 and p > 1:
        # solve records follow each sub-step through a copy of the caller's context
        with ThreadPoolExecutor(max_workers=min(cfg.workers, p)) as pool:
            futures = [
                pool.submit(copy_context().run, sub_step, m) for m in regularized
            ]
            sub_solutions = [f.result() for f in futures]
    else:
        sub_solutions = [sub_step(m) for m in regularized]

    total = sub_solutions[0]
    for u_alpha in sub_solutions[1:]:
        total = total + u_alpha

    return ThreeLevelState(state.u_curr, total / p, state.n + 1)


def additive_direct_step(
    state: ThreeLevelState, parts: Sequence[LinearMap], cfg: SchemeConfig
) -> ThreeLevelState:
    """The additive scheme evaluated directly as `D~ = sum_a (I + mu Q_a)^-1 Q_a`."""
    return advance(state, sum_of(_regularized_parts(parts, cfg), "Q~"), cfg.tau)


def split_product_step(
    state: ThreeLevelState,
    ata_reg: LinearMap,
    b_reg: LinearMap,
    cfg: SchemeConfig,
) -> ThreeLevelState:
    """One step with `D~ = (A*A)~ + B~`."""
    return advance(state, sum_of([ata_reg, b_reg], "(A*A)~ + B~"), cfg.tau)


def _regularized_q(q: LinearMap, cfg: SchemeConfig) -> LinearMap:
    mu = (cfg.weights().sigma or 0.0) * cfg.tau**2
    return regularized_resolvent(
        q, mu, cfg.solver_tol, cfg.max_iter(q.spec.size), descriptor="Q~"
    )


def _regularized_parts(
    parts: Sequence[LinearMap], cfg: SchemeConfig
) -> list[LinearMap]:
    mu = (cfg.weights(len(parts)).sigma or 0.0) * cfg.tau**2
    return [
        regularized_resolvent(
            part, mu, cfg.solver_tol, cfg.max_iter(part.spec.size)
        )
        for part in parts
    ]


def additive_parts(ops: PlateOperators) -> list[LinearMap]:
    """The parts `Q_1 = A* A`, `Q_2 = B` of the additive scheme."""
    return [ops.a_star_a, ops.b]


def split_count(scheme: str, ops: PlateOperators, p: int = 2) -> int:
    """
    The number of parts `p` entering the scheme's threshold weights.

    A foundation split with only one non-vanishing term counts as `p = 1`.
    """
    if scheme == "additive_averaged":
        return len(additive_parts(ops))
    if scheme == "split_product_bsplit":
        return max(1, len(foundation_parts(ops.a, ops.coefficients)))
    if scheme == "split_product_aasplit":
        return p
    if scheme == "split_factor_sum":
        return len(ops.directional)

    return 1


def split_operators(
    cfg: SchemeConfig, ops: PlateOperators
) -> tuple[LinearMap, LinearMap]:
    """
    The regularized pair `((A*A)~, B~)` of a splitting scheme.

    Raises:
        ValueError: `cfg.scheme` is not a splitting scheme.
    """
    if cfg.scheme not in SPLIT_SCHEMES:
        raise ValueError(f"{cfg.scheme!r} is not a splitting scheme")
    weights = cfg.weights(split_count(cfg.scheme, ops, cfg.p))
    sigma_a = weights.sigma_a or 0.0
    sigma_b = weights.sigma_b or 0.0
    tol, max_iter = cfg.solver_tol, cfg.max_iter(ops.spec.size)

    if cfg.scheme == "split_product_aasplit":
        ata = regularized_factor_sum(
            uniform_factors(ops.a, cfg.p), sigma_a, cfg.tau, tol, max_iter
        )
    elif cfg.scheme == "split_factor_sum":
        ata = regularized_sum_product(ops.directional, sigma_a, cfg.tau, tol, max_iter)
    else:
        ata = regularized_product(ops.a, sigma_a, cfg.tau, tol, max_iter)

    mu_b = sigma_b * cfg.tau**2
    if cfg.scheme == "split_product_bsplit":
        parts = foundation_parts(ops.a, ops.coefficients)
        b_reg = (
            sum_of(
                [regularized_resolvent(b, mu_b, tol, max_iter) for b in parts], "B~"
            )
            if parts
            else zero_map(ops.spec)
        )
    else:
        b_reg = regularized_resolvent(ops.b, mu_b, tol, max_iter, descriptor="B~")

    return ata, b_reg


def scheme_operator(cfg: SchemeConfig, ops: PlateOperators) -> LinearMap:
    """
    The effective operator `D~` of the explicit-update form.

    The weighted scheme shares `D~ = (I + sigma tau^2 Q)^-1 Q` with the
    regularized scheme.
    """
    if cfg.scheme == "explicit":
        return ops.q
    if cfg.scheme in ("weighted", "regularized_q"):
        return _regularized_q(ops.q, cfg)
    if cfg.scheme == "additive_averaged":
        return sum_of(_regularized_parts(additive_parts(ops), cfg), "Q~")
    ata, b_reg = split_operators(cfg, ops)

    return sum_of([ata, b_reg], "(A*A)~ + B~")


@dataclass(frozen=True)
class CanonicalForm:
    """
    The operators of `C (u[n+1] - 2 u[n] + u[n-1]) / tau^2 + D u[n] = 0`.

    Attributes:
        c: The operator `C`.
        d: The operator `D`.
        tau: The time step.
    """

    c: LinearMap
    d: LinearMap
    tau: float

    @property
    def g(self) -> LinearMap:
        """The energy operator `G = C - (tau^2 / 4) D`."""
        return LinearCombination(
            [(1.0, self.c), (-(self.tau**2) / 4, self.d)], descriptor="G"
        )


def canonical_form(cfg: SchemeConfig, ops: PlateOperators) -> CanonicalForm:
    """
    The canonical pair `(C, D)` of a scheme.

    The weighted scheme has `C = I + sigma tau^2 Q`, `D = Q`. All other
    schemes have `C = I` and `D = D~`.
    """
    if cfg.scheme == "weighted":
        sigma = cfg.weights().sigma or 0.0
        c = LinearCombination(
            [(1.0, identity(ops.spec)), (sigma * cfg.tau**2, ops.q)], descriptor="C"
        )
        return CanonicalForm(c, ops.q, cfg.tau)

    return CanonicalForm(identity(ops.spec), scheme_operator(cfg, ops), cfg.tau)


class Stepper:
    """
    Drives one scheme over `cfg.steps` steps.

    The scheme maps are assembled once and shared read-only, while every
    trajectory owns its states.

    Args:
        cfg: The scheme parameters.
        ops: The plate operators.
        implicit: Step the weighted scheme through its implicit form.

    Examples:
        >>> from pysplit.lattice import GridSpec
        >>> from pysplit.operators import plate_operators
        >>> spec = GridSpec.unit_square(2)
        >>> cfg = SchemeConfig("explicit", tau=0.1, final_time=0.1)
        >>> stepper = Stepper(cfg, plate_operators(spec))
        >>> state = ThreeLevelState(Field(spec, [1.0]), Field(spec, [1.0]), 1)
        >>> print(f"{stepper.step(state).u_curr.values[0, 0]:.3f}")
        -1.578
    """

    def __init__(
        self, cfg: SchemeConfig, ops: PlateOperators, implicit: bool = False
    ) -> None:
        self.cfg = cfg
        self.ops = ops
        self.implicit = implicit and cfg.scheme == "weighted"
        self.p = split_count(cfg.scheme, ops, cfg.p)
        self.weights = cfg.weights(self.p)
        if cfg.scheme == "additive_averaged":
            self._parts = additive_parts(ops)
        elif cfg.scheme in SPLIT_SCHEMES:
            self._ata, self._b_reg = split_operators(cfg, ops)
        self.d_tilde = scheme_operator(cfg, ops)

    def canonical_form(self) -> CanonicalForm:
        return canonical_form(self.cfg, self.ops)

    def start(self, w0: Field, w0_dot: Optional[Field] = None) -> ThreeLevelState:
        try:
            return initialize(w0, w0_dot, self.ops.q, self.cfg)
        except (IterationLimitError, NumericalBreakdownError) as e:
            raise StepError(1, e) from e

    def step(self, state: ThreeLevelState) -> ThreeLevelState:
        """
        Advance by one level.

        Raises:
            StepError: An inner solve failed, the level is attached.
        """
        cfg = self.cfg
        try:
            if cfg.scheme == "explicit":
                return explicit_step(state, self.ops.q, cfg)
            if self.implicit:
                return weighted_step(state, self.ops.q, cfg)
            if cfg.scheme == "additive_averaged":
                return additive_averaged_step(state, self._parts, cfg)
            if cfg.scheme in SPLIT_SCHEMES:
                return split_product_step(state, self._ata, self._b_reg, cfg)
            return advance(state, self.d_tilde, cfg.tau)
        except (IterationLimitError, NumericalBreakdownError) as e:
            raise StepError(state.n + 1, e) from e

    def run(
        self, w0: Field, w0_dot: Optional[Field] = None
    ) -> Iterator[ThreeLevelState]:
        """Yield the states with `n = 1..N`, `u[N]` being the last `u_curr`."""
        state = self.start(w0, w0_dot)
        yield state
        while state.n < self.cfg.steps:
            state = self.step(state)
            yield state
