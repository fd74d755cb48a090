"""
Experiment orchestration: runs against the spectral oracle, convergence
sweeps, stability matrices, and their CSV output.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pytools.convergence import EOCRecorder

from pysplit.config import ExperimentConfig
from pysplit.diagnostics import (
    BoundednessMonitor,
    EnergyRecord,
    energy,
    relative_drift,
    write_energy_csv,
)
from pysplit.errors import (
    ConfigError,
    DimensionTooLargeError,
    NotNonNegativeError,
    StepError,
)
from pysplit.krylov import record_solves
from pysplit.lattice import FLOAT_FORMAT, Field, GridSpec, field_to_frame, norm
from pysplit.operators import PlateCoefficients, plate_operators
from pysplit.oracle import (
    REFERENCE_MAGNITUDE_SCALE,
    SpectralExpansion,
    error_norms,
    exact_solution,
    expand,
    frequencies_squared,
)
from pysplit.stability import (
    DEFAULT_DIM_CAP,
    check_lemma1,
    expected_stable,
    threshold_weights,
)
from pysplit.steppers import Stepper, split_count

logger = logging.getLogger(__name__)

LEVEL_COLUMNS = ["n", "t", "eps_inf", "eps_2", "energy", "max_abs"]
ERROR_COLUMNS = ["n", "t", "eps_inf", "eps_2"]
CONVERGENCE_COLUMNS = ["tau", "max_eps_2", "max_eps_inf", "order"]
VERDICT_COLUMNS = [
    "scheme",
    "sigma_a",
    "sigma_b",
    "tau",
    "lemma1",
    "bounded",
    "sigma",
    "tau_0",
    "g_min_eigenvalue",
    "expected_stable",
    "growth",
]


@dataclass
class RunReport:
    """
    The outcome of one experiment.

    Attributes:
        config: The experiment configuration.
        levels: One row `n, t, eps_inf, eps_2, energy, max_abs` per computed
            level `n = 0..N`, with `energy` of the pair `(u[n], u[n+1])`.
        energy: The scheme energy records.
        probes: Numeric and exact deflection at the probe nodes per level.
        solve_count: Number of inner solves.
        total_iterations: Sum of CG iterations over all solves.
        wall_time: Seconds spent.
        tau_0: The explicit step bound `2 / ||Q||^(1/2)`.
        expected_stable: Whether theory promises a bounded run.
        blow_up_level: First level flagged as blown up, if any.
        growth: Largest `max |u[n]|` over `max |u[0]|`.
        energy_violation_level: First pair with a negative energy form, if any.
    """

    config: ExperimentConfig
    levels: pd.DataFrame
    energy: list[EnergyRecord]
    probes: pd.DataFrame
    solve_count: int
    total_iterations: int
    wall_time: float
    tau_0: float
    expected_stable: bool
    blow_up_level: Optional[int] = None
    growth: float = 1.0
    energy_violation_level: Optional[int] = None

    @property
    def blown_up(self) -> bool:
        return self.blow_up_level is not None

    @property
    def unexpected_instability(self) -> bool:
        return self.blown_up and self.expected_stable

    def max_error(self) -> float:
        """The largest `eps_2` over all levels."""
        return float(self.levels["eps_2"].max())

    def max_error_inf(self) -> float:
        return float(self.levels["eps_inf"].max())

    def energy_drift(self) -> float:
        return relative_drift(self.energy)

    def errors_frame(self) -> pd.DataFrame:
        return self.levels[ERROR_COLUMNS]


def plate_threshold(spec: GridSpec, coefficients: PlateCoefficients) -> float:
    """
    The explicit step bound `2 / max(r_k)^(1/2)` from the closed-form spectrum.

    Examples:
        >>> tau_0 = plate_threshold(GridSpec.unit_square(2), PlateCoefficients())
        >>> print(f"{tau_0:.5f}")
        0.12456
    """
    return 2.0 / math.sqrt(float(np.max(frequencies_squared(spec, coefficients))))


def initial_magnitudes(w0: Field) -> tuple[float, float]:
    """
    `max |w0|` and `||w0||` of the initial deflection.

    Reference tables list these two numbers scaled by 100.
    """
    return w0.max_abs(), norm(w0)


def run_experiment(
    cfg: ExperimentConfig,
    write: bool = True,
    initial: Optional[Field] = None,
    max_steps: Optional[int] = None,
) -> RunReport:
    """
    Run one scheme from the configured initial data to the final time.

    Every level is compared with the exact semi-discrete solution and the
    scheme energy of every `energy_stride`-th pair is recorded. A blown-up
    trajectory stops at the flagged level, which is not written.

    Args:
        cfg: The experiment.
        write: Write `errors.csv` and `energy.csv` to the output directory.
        initial: Initial deflection replacing the configured one.
        max_steps: Stop earlier than the final time.

    Raises:
        StepError: A solve failed, the level is attached.
        ConfigError: The initial condition cannot be resolved.
    """
    started = time.perf_counter()
    spec, scheme = cfg.grid, cfg.scheme
    ops = plate_operators(spec, cfg.plate)
    w0 = initial if initial is not None else cfg.initial_condition.resolve(spec)
    if w0.spec != spec:
        raise ConfigError(f"Initial deflection lives on {w0.spec}, expected {spec}")
    stepper = Stepper(scheme, ops)
    form = stepper.canonical_form()
    g = form.g
    expansion = expand(w0, cfg.plate)
    tau_0 = plate_threshold(spec, cfg.plate)
    expected = expected_stable(scheme, stepper.p, tau_0)
    steps = scheme.steps if max_steps is None else min(max_steps, scheme.steps)
    max_w0, norm_w0 = initial_magnitudes(w0)
    logger.info(
        "run %s: grid %dx%d, tau %g, %d steps, max|w0| %.6g (x100 %.6g)",
        scheme.scheme,
        spec.n1,
        spec.n2,
        scheme.tau,
        steps,
        max_w0,
        max_w0 * REFERENCE_MAGNITUDE_SCALE,
    )
    logger.debug("||w0|| = %.6g", norm_w0)

    nodes = [spec.nearest_node(x1, x2) for x1, x2 in cfg.output.probe_points]
    rows: list[list[float]] = []
    probe_rows: list[list[float]] = []
    records: list[EnergyRecord] = []
    monitor = BoundednessMonitor()
    violation: Optional[int] = None
    stride = cfg.output.energy_stride

    def observe(n: int, u: Field) -> bool:
        if not monitor.observe(n, u):
            return False
        t = n * scheme.tau
        exact = exact_solution(expansion, t)
        eps_inf, eps_2 = error_norms(u, exact)
        rows.append([n, t, eps_inf, eps_2, u.max_abs()])
        probe_rows.append(
            [n, t]
            + [float(u.values[i2 - 1, i1 - 1]) for i1, i2 in nodes]
            + [float(exact.values[i2 - 1, i1 - 1]) for i1, i2 in nodes]
        )
        return True

    with record_solves() as solves:
        observe(0, w0)
        for state in stepper.run(w0):
            if not observe(state.n, state.u_curr):
                break
            pair = state.n - 1
            if violation is None and pair % stride == 0:
                try:
                    records.append(
                        energy(state.u_prev, state.u_curr, g, form.d, scheme.tau, pair)
                    )
                except NotNonNegativeError as e:
                    violation = pair
                    logger.warning("energy form violated: %s", e)
            if state.n >= steps:
                break

    levels = pd.DataFrame(rows, columns=[c for c in LEVEL_COLUMNS if c != "energy"])
    levels["n"] = levels["n"].astype(int)
    levels["energy"] = levels["n"].map({r.n: r.total for r in records}).astype(float)
    probe_columns = (
        ["n", "t"]
        + [f"u@{i1}:{i2}" for i1, i2 in nodes]
        + [f"exact@{i1}:{i2}" for i1, i2 in nodes]
    )
    probes = pd.DataFrame(probe_rows, columns=probe_columns)
    probes["n"] = probes["n"].astype(int)

    report = RunReport(
        config=cfg,
        levels=levels[LEVEL_COLUMNS],
        energy=records,
        probes=probes,
        solve_count=len(solves),
        total_iterations=sum(s.report.iterations for s in solves),
        wall_time=time.perf_counter() - started,
        tau_0=tau_0,
        expected_stable=expected,
        blow_up_level=monitor.blow_up_level,
        growth=monitor.growth(),
        energy_violation_level=violation,
    )
    logger.info(
        "run %s done: max eps_2 %.3e, %d solves, %d CG iterations, %.2f s",
        scheme.scheme,
        report.max_error(),
        report.solve_count,
        report.total_iterations,
        report.wall_time,
    )
    if report.unexpected_instability:
        logger.warning(
            "%s blew up at level %s although stability was expected",
            scheme.scheme,
            report.blow_up_level,
        )
    if write:
        write_run(report)

    return report


def write_run(report: RunReport) -> None:
    """Write `errors.csv` and `energy.csv` of a run, empty fields for NaN."""
    out = report.config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_frame(report.errors_frame(), out / "errors.csv")
    write_energy_csv(report.energy, report.config.scheme.tau, out / "energy.csv")


@dataclass(frozen=True)
class ConvergenceTable:
    """
    Errors of a `tau` ladder.

    Attributes:
        frame: Rows `tau, max_eps_2, max_eps_inf, order`, coarsest first, where
            `order = log(eps(tau_prev) / eps(tau)) / log(tau_prev / tau)`.
        eoc_order: Least-squares order over the whole ladder.
    """

    frame: pd.DataFrame
    eoc_order: float

    @property
    def orders(self) -> list[float]:
        return [float(o) for o in self.frame["order"].iloc[1:]]


def run_convergence_sweep(
    cfg: ExperimentConfig,
    taus: Sequence[float],
    workers: int = 1,
    write: bool = True,
) -> ConvergenceTable:
    """
    Run the configured scheme for every `tau` and estimate the order in time.

    Runs are independent and dispatched to `workers` threads, the table is
    ordered by `tau` regardless of completion order.

    Raises:
        ConfigError: Fewer than three steps are given or one does not divide `T`.
    """
    if len(set(taus)) < 3:
        raise ConfigError(
            f"A sweep needs at least 3 distinct time steps, got {list(taus)}"
        )
    ladder = sorted(set(taus), reverse=True)
    try:
        configs = [replace(cfg, scheme=cfg.scheme.with_tau(tau)) for tau in ladder]
    except ValueError as e:
        raise ConfigError(f"Invalid time step ladder: {e}") from e

    def run(c: ExperimentConfig) -> RunReport:
        return run_experiment(c, write=False)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(run, configs))

    eoc = EOCRecorder()
    rows = []
    previous: Optional[tuple[float, float]] = None
    for tau, report in zip(ladder, reports):
        error = report.max_error()
        order = math.nan
        if previous is not None and error > 0 and previous[1] > 0:
            order = math.log(previous[1] / error) / math.log(previous[0] / tau)
        rows.append([tau, error, report.max_error_inf(), order])
        eoc.add_data_point(tau, error)
        previous = (tau, error)
    frame = pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)
    table = ConvergenceTable(frame, float(eoc.order_estimate()))
    logger.info(
        "sweep %s: orders %s, least-squares %.3f",
        cfg.scheme.scheme,
        ", ".join(f"{o:.3f}" for o in table.orders),
        table.eoc_order,
    )
    if write:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _write_frame(frame, cfg.output_dir / "convergence.csv")

    return table


def run_stability_matrix(
    cfg: ExperimentConfig,
    schemes: Sequence[str],
    weight_factors: Sequence[float],
    taus: Sequence[float],
    relative: bool = True,
    steps: int = 200,
    dense: bool = True,
    dim_cap: int = DEFAULT_DIM_CAP,
    write: bool = True,
) -> pd.DataFrame:
    """
    Dense and empirical stability verdicts over schemes, weights and steps.

    Weights are the threshold weights of each scheme scaled by a factor
    (`sigma`, `sigma_b` and `sigma_a^2` scale linearly), the explicit scheme
    is run once per step. Steps are multiples of `tau_0` when `relative`.
    A trajectory is bounded when it does not blow up within `steps` steps and
    `max |u[n]|` stays within twice the envelope `sum_k |c_k| max |psi_k|`
    of the initial data. A failed solve counts as a blow-up, and `C` or `D`
    failing to be symmetric non-negative fails the dense check.

    Raises:
        DimensionTooLargeError: Dense checks exceed `dim_cap` unknowns.
    """
    spec = cfg.grid
    if dense and spec.size > dim_cap:
        raise DimensionTooLargeError(
            f"Dense checks need {spec.size} > {dim_cap} unknowns, "
            "disable them or shrink the grid"
        )
    ops = plate_operators(spec, cfg.plate)
    tau_0 = plate_threshold(spec, cfg.plate)
    w0 = cfg.initial_condition.resolve(spec)
    envelope = _envelope(expand(w0, cfg.plate))

    rows = []
    for scheme in schemes:
        factors = [1.0] if scheme == "explicit" else list(weight_factors)
        for factor in factors:
            for tau_value in taus:
                tau = tau_value * tau_0 if relative else tau_value
                p = split_count(scheme, ops, cfg.scheme.p)
                weights = threshold_weights(scheme, p).scaled(factor)
                scheme_cfg = replace(
                    cfg.scheme,
                    scheme=scheme,
                    tau=tau,
                    final_time=tau * steps,
                    sigma=weights.sigma,
                    sigma_a=weights.sigma_a,
                    sigma_b=weights.sigma_b,
                )
                run_cfg = replace(cfg, scheme=scheme_cfg)
                rows.append(
                    _verdict(run_cfg, w0, envelope, tau_0, dense, dim_cap)
                )

    frame = pd.DataFrame(rows, columns=VERDICT_COLUMNS)
    if write:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _write_frame(frame, cfg.output_dir / "verdicts.csv")

    return frame


def _verdict(
    cfg: ExperimentConfig,
    w0: Field,
    envelope: float,
    tau_0: float,
    dense: bool,
    dim_cap: int,
) -> list[object]:
    scheme = cfg.scheme
    ops = plate_operators(cfg.grid, cfg.plate)
    stepper = Stepper(scheme, ops)
    lemma1: Optional[bool] = None
    g_min = math.nan
    if dense:
        form = stepper.canonical_form()
        try:
            verdict = check_lemma1(form.c, form.d, scheme.tau, dim_cap)
            lemma1, g_min = verdict.condition_holds, verdict.g_min_eigenvalue
        except NotNonNegativeError as e:
            lemma1 = False
            logger.warning("verdict %s tau %.4g: %s", scheme.scheme, scheme.tau, e)

    monitor = BoundednessMonitor()
    monitor.observe(0, w0)
    try:
        for state in stepper.run(w0):
            if not monitor.observe(state.n, state.u_curr):
                break
    except StepError as e:
        # a failed solve counts as a blow-up at that level
        monitor.fail(e.level)
        logger.warning("verdict %s tau %.4g: %s", scheme.scheme, scheme.tau, e)
    bounded = monitor.bounded_by(envelope)
    weights = stepper.weights
    logger.info(
        "verdict %s tau %.4g: lemma1 %s, bounded %s, growth %.3g",
        scheme.scheme,
        scheme.tau,
        lemma1,
        bounded,
        monitor.growth(),
    )

    return [
        scheme.scheme,
        weights.sigma_a,
        weights.sigma_b,
        scheme.tau,
        lemma1,
        bounded,
        weights.sigma,
        tau_0,
        g_min,
        expected_stable(scheme, stepper.p, tau_0),
        monitor.growth(),
    ]


def _envelope(expansion: SpectralExpansion) -> float:
    # every normalized sine mode is bounded by (4 / (l1 l2))^(1/2)
    spec = expansion.spec
    bound = math.sqrt(4.0 / (spec.l1 * spec.l2))

    return float(np.sum(np.abs(expansion.coefficients))) * bound


def oracle_snapshots(
    cfg: ExperimentConfig, times: Optional[Sequence[float]] = None, write: bool = True
) -> pd.DataFrame:
    """
    The exact solution at the given times in the field dump layout with a
    leading `t` column.

    Times are snapped to the nearest level `n tau` of the configured step.
    """
    spec = cfg.grid
    w0 = cfg.initial_condition.resolve(spec)
    expansion = expand(w0, cfg.plate)
    tau = cfg.scheme.tau
    frames = []
    for requested in times if times is not None else cfg.output.snapshot_times:
        t = round(requested / tau) * tau
        frame = field_to_frame(exact_solution(expansion, t))
        frame.insert(0, "t", t)
        frames.append(frame)
    snapshots = pd.concat(frames, ignore_index=True)
    if write:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _write_frame(snapshots, cfg.output_dir / "snapshots.csv")

    return snapshots


def probe_histories(cfg: ExperimentConfig, write: bool = True) -> pd.DataFrame:
    """
    Numeric and exact deflection histories at the probe points.

    Probe points are snapped to their nearest interior node, named in the
    column headers as `u@i1:i2` and `exact@i1:i2`.
    """
    report = run_experiment(cfg, write=False)
    if write:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _write_frame(report.probes, cfg.output_dir / "probes.csv")

    return report.probes


def _write_frame(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
