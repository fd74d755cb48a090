import math

import numpy as np
import pandas as pd
import pytest

from pysplit.diagnostics import (
    ENERGY_COLUMNS,
    BoundednessMonitor,
    EnergyRecord,
    energy,
    energy_frame,
    physical_energy,
    relative_drift,
    write_energy_csv,
)
from pysplit.errors import NotNonNegativeError
from pysplit.lattice import Field
from pysplit.linear_map import LinearCombination, identity
from pysplit.oracle import (
    exact_solution,
    expand,
    highest_mode,
    polynomial_deflection,
    spectral_energy,
)
from pysplit.stability import explicit_threshold
from pysplit.steppers import SchemeConfig, Stepper


def energy_history(stepper, w0):
    form = stepper.canonical_form()
    records = []
    previous = None
    for state in stepper.run(w0):
        if previous is not None:
            pair = (previous.u_curr, state.u_curr)
            records.append(
                energy(*pair, form.g, form.d, stepper.cfg.tau, previous.n)
            )
        previous = state
    return records


@pytest.mark.parametrize(
    "scheme, tau",
    [
        ("weighted", 0.01),
        ("regularized_q", 0.1),
        ("split_product", 0.01),
        ("split_product", 1.0),
        ("split_factor_sum", 0.5),
        ("additive_averaged", 0.05),
    ],
)
def test_scheme_energy_is_conserved(ops4, spec4, scheme, tau):
    cfg = SchemeConfig(scheme, tau=tau, final_time=20 * tau, solver_tol=1e-12)
    records = energy_history(Stepper(cfg, ops4), polynomial_deflection(spec4))
    assert len(records) == 19
    assert relative_drift(records) < 1e-8


def test_explicit_energy_is_conserved_below_threshold(ops4, spec4):
    tau = 0.5 * explicit_threshold(ops4.q)
    cfg = SchemeConfig("explicit", tau=tau, final_time=20 * tau)
    records = energy_history(Stepper(cfg, ops4), polynomial_deflection(spec4))
    assert relative_drift(records) < 1e-10


def test_negative_energy_form_is_reported(ops4, spec4):
    tau = 1.5 * explicit_threshold(ops4.q)
    g = LinearCombination(
        [(1.0, identity(spec4)), (-(tau**2) / 4, ops4.q)], descriptor="G"
    )
    psi, _ = highest_mode(spec4)
    with pytest.raises(NotNonNegativeError, match="level 7"):
        energy(Field.zeros(spec4), psi, g, ops4.q, tau, 7)


def test_energy_needs_positive_step(spec4):
    one = identity(spec4)
    with pytest.raises(ValueError):
        energy(Field.zeros(spec4), Field.zeros(spec4), one, one, 0.0)


def test_physical_energy_tracks_oracle(ops8, spec8):
    expansion = expand(polynomial_deflection(spec8))
    t, tau = 0.1, 1e-5
    levels = [exact_solution(expansion, s) for s in (t - tau, t, t + tau)]
    value = physical_energy(*levels, ops8.a, ops8.b, tau)
    exact = spectral_energy(expansion, ops8.coefficients, t)
    assert value == pytest.approx(exact, rel=1e-4)


def test_relative_drift_edge_cases():
    assert relative_drift([]) == 0.0
    records = [EnergyRecord(0, 0.0, 0.0, 0.0), EnergyRecord(1, 0.0, 0.5, 0.5)]
    assert relative_drift(records) == 0.5


def test_energy_table(tmp_path):
    records = [EnergyRecord(0, 1.0, 2.0, 3.0), EnergyRecord(1, 1.5, 1.5, 3.0)]
    frame = energy_frame(records, 0.5)
    assert list(frame.columns) == ENERGY_COLUMNS
    assert frame["t"].tolist() == [0.0, 0.5]

    path = tmp_path / "energy.csv"
    write_energy_csv(records, 0.5, path)
    pd.testing.assert_frame_equal(pd.read_csv(path), frame, check_dtype=False)


def test_monitor_tracks_growth(spec4):
    monitor = BoundednessMonitor()
    for n, scale in enumerate([1.0, 3.0, 2.0]):
        assert monitor.observe(n, Field(spec4, np.full(9, scale)))
    assert monitor.growth() == 3.0
    assert monitor.history == [1.0, 3.0, 2.0]
    assert monitor.bounded_by(1.5)
    assert not monitor.bounded_by(1.0)


def test_monitor_flags_non_finite_levels(spec4):
    monitor = BoundednessMonitor()
    monitor.observe(0, Field(spec4, np.ones(9)))
    assert not monitor.observe(5, Field(spec4, np.full(9, np.inf)))
    assert monitor.blow_up_level == 5
    assert monitor.growth() == math.inf
    assert not monitor.bounded_by(1e30)


def test_monitor_with_zero_start(spec4):
    monitor = BoundednessMonitor()
    monitor.observe(0, Field.zeros(spec4))
    assert monitor.growth() == 1.0
    monitor.observe(1, Field(spec4, np.ones(9)))
    assert monitor.growth() == math.inf
