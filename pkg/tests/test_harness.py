import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from pysplit import harness
from pysplit.config import InitialCondition, OutputConfig
from pysplit.errors import ConfigError, DimensionTooLargeError, NotNonNegativeError
from pysplit.harness import (
    CONVERGENCE_COLUMNS,
    ERROR_COLUMNS,
    LEVEL_COLUMNS,
    VERDICT_COLUMNS,
    initial_magnitudes,
    oracle_snapshots,
    plate_threshold,
    probe_histories,
    run_convergence_sweep,
    run_experiment,
    run_stability_matrix,
)
from pysplit.lattice import GridSpec, norm
from pysplit.oracle import highest_mode, polynomial_deflection
from pysplit.stability import explicit_threshold
from pysplit.steppers import SCHEMES
from tests.conftest import (
    desk_config,
    directional_eigenvalues,
    recurrence,
    scheme_symbol,
)

IMPLICIT_SCHEMES = [s for s in SCHEMES if s != "explicit"]
LOW_MODE = InitialCondition("eigenmode", 1, 1)


def test_plate_threshold_matches_power_iteration(ops8, spec8):
    assert plate_threshold(spec8, ops8.coefficients) == pytest.approx(
        explicit_threshold(ops8.q), rel=1e-8
    )


def test_initial_magnitudes_are_analytic():
    w0 = polynomial_deflection(GridSpec.unit_square(256))
    max_w0, norm_w0 = initial_magnitudes(w0)
    assert max_w0 == pytest.approx(0.02195, abs=1e-5)
    assert norm_w0 == pytest.approx(0.009524, abs=1e-5)


def test_run_experiment_writes_tables(tmp_path):
    cfg = desk_config(tmp_path, scheme="weighted", tau=0.01, final_time=0.1)
    report = run_experiment(cfg)

    assert list(report.levels.columns) == LEVEL_COLUMNS
    assert report.levels["n"].tolist() == list(range(11))
    assert report.levels["eps_2"].iloc[0] < 1e-15
    assert report.levels["energy"].iloc[:-1].notna().all()
    assert math.isnan(report.levels["energy"].iloc[-1])
    assert len(report.energy) == 10
    assert report.expected_stable
    assert not report.blown_up
    assert report.solve_count == 10
    assert report.total_iterations > 0
    assert 0 < report.max_error() < 0.5 * norm(polynomial_deflection(cfg.grid))

    errors = pd.read_csv(cfg.output_dir / "errors.csv")
    energy = pd.read_csv(cfg.output_dir / "energy.csv")
    assert list(errors.columns) == ERROR_COLUMNS
    assert len(errors) == 11
    assert list(energy.columns) == ["n", "t", "kinetic", "potential", "total"]
    assert energy["n"].tolist() == list(range(10))


@pytest.mark.parametrize("scheme", ["weighted", "split_product", "split_factor_sum"])
def test_eigenmode_errors_follow_scalar_recurrence(tmp_path, scheme):
    tau, steps = 0.005, 40
    cfg = desk_config(
        tmp_path,
        initial=InitialCondition("eigenmode", 1, 2),
        scheme=scheme,
        tau=tau,
        final_time=tau * steps,
        solver_tol=1e-13,
    )
    lam1, lam2 = directional_eigenvalues(cfg.grid, 1, 2)
    r = scheme_symbol("explicit", lam1, lam2, tau)
    first = 1 / (1 + tau**2 / 2 * r)
    ratio = 2 - tau**2 * scheme_symbol(scheme, lam1, lam2, tau)
    amplitudes = recurrence(1.0, first, ratio, steps)

    levels = run_experiment(cfg, write=False).levels

    omega = math.sqrt(r)
    expected = [abs(a - math.cos(omega * n * tau)) for n, a in enumerate(amplitudes)]
    np.testing.assert_allclose(levels["eps_2"], expected, rtol=1e-6, atol=1e-11)


def test_energy_stride(tmp_path):
    cfg = desk_config(tmp_path, scheme="split_product", tau=0.01, final_time=0.1)
    cfg = replace(cfg, output=replace(cfg.output, energy_stride=3))
    report = run_experiment(cfg, write=False)
    assert [r.n for r in report.energy] == [0, 3, 6, 9]
    assert report.levels["energy"].notna().sum() == 4


def test_max_steps(tmp_path):
    cfg = desk_config(tmp_path, scheme="weighted", tau=0.01, final_time=0.1)
    report = run_experiment(cfg, write=False, max_steps=4)
    assert report.levels["n"].tolist() == [0, 1, 2, 3, 4]


def test_initial_deflection_must_match_grid(tmp_path):
    cfg = desk_config(tmp_path, n=8)
    with pytest.raises(ConfigError):
        run_experiment(
            cfg, write=False, initial=polynomial_deflection(GridSpec.unit_square(4))
        )


def test_probe_histories(tmp_path):
    cfg = desk_config(tmp_path, scheme="weighted", tau=0.01, final_time=0.05)
    probes = probe_histories(cfg)

    assert list(probes.columns) == [
        "n", "t", "u@2:2", "u@4:4", "u@6:2", "exact@2:2", "exact@4:4", "exact@6:2",
    ]
    assert len(probes) == 6
    np.testing.assert_allclose(probes["u@4:4"].iloc[0], probes["exact@4:4"].iloc[0])
    assert (cfg.output_dir / "probes.csv").exists()


def test_oracle_snapshots(tmp_path):
    cfg = desk_config(tmp_path, scheme="weighted", tau=0.01, final_time=0.1)
    snapshots = oracle_snapshots(cfg, [0.0, 0.051])

    assert list(snapshots.columns) == ["t", "i1", "i2", "x1", "x2", "value"]
    assert len(snapshots) == 2 * cfg.grid.size
    assert sorted(snapshots["t"].unique()) == pytest.approx([0.0, 0.05])
    initial = snapshots[snapshots["t"] == 0.0]["value"].to_numpy()
    np.testing.assert_allclose(initial, polynomial_deflection(cfg.grid).values.ravel())
    assert (cfg.output_dir / "snapshots.csv").exists()


def test_identical_configurations_write_identical_files(tmp_path):
    first = desk_config(
        tmp_path / "a", scheme="split_factor_sum", tau=0.01, final_time=0.1
    )
    second = replace(first, output=OutputConfig(output_dir=str(tmp_path / "b")))
    run_experiment(first)
    run_experiment(second)
    for name in ("errors.csv", "energy.csv"):
        expected = (first.output_dir / name).read_bytes()
        assert (second.output_dir / name).read_bytes() == expected


def test_explicit_blow_up_is_reported(spec8, tmp_path):
    psi, _ = highest_mode(spec8)
    cfg = desk_config(tmp_path, scheme="explicit", tau=1.0, final_time=1.0)
    tau = 1.05 * plate_threshold(cfg.grid, cfg.plate)
    cfg = replace(cfg, scheme=replace(cfg.scheme, tau=tau, final_time=500 * tau))

    report = run_experiment(cfg, initial=psi)

    assert report.blown_up
    assert not report.expected_stable
    assert not report.unexpected_instability
    assert report.growth == math.inf
    assert report.energy_violation_level == 0
    assert report.levels["n"].max() < report.blow_up_level
    errors = pd.read_csv(cfg.output_dir / "errors.csv")
    assert np.isfinite(errors[["eps_inf", "eps_2"]]).all().all()


@pytest.mark.parametrize("factor, bounded", [(0.95, True), (1.05, False)])
def test_explicit_threshold_is_sharp(spec8, tmp_path, factor, bounded):
    psi, _ = highest_mode(spec8)
    cfg = desk_config(tmp_path, scheme="explicit", tau=1.0, final_time=1.0)
    tau = factor * plate_threshold(cfg.grid, cfg.plate)
    cfg = replace(cfg, scheme=replace(cfg.scheme, tau=tau, final_time=500 * tau))

    report = run_experiment(cfg, write=False, initial=psi)

    assert report.expected_stable == bounded
    if bounded:
        assert not report.blown_up
        assert report.growth < 10
        assert len(report.levels) == 501
    else:
        assert report.growth >= 10


def test_sweep_needs_three_steps(tmp_path):
    cfg = desk_config(tmp_path)
    with pytest.raises(ConfigError):
        run_convergence_sweep(cfg, [0.01, 0.005, 0.01])
    with pytest.raises(ConfigError):
        run_convergence_sweep(cfg, [0.01, 0.005, 0.003])


def test_sweep_table(tmp_path):
    cfg = desk_config(
        tmp_path, initial=LOW_MODE, scheme="weighted", tau=0.01, final_time=0.1
    )
    table = run_convergence_sweep(cfg, [0.0025, 0.01, 0.005], workers=2)

    assert list(table.frame.columns) == CONVERGENCE_COLUMNS
    assert table.frame["tau"].tolist() == [0.01, 0.005, 0.0025]
    assert math.isnan(table.frame["order"].iloc[0])
    assert len(table.orders) == 2
    written = pd.read_csv(cfg.output_dir / "convergence.csv")
    assert written["tau"].tolist() == [0.01, 0.005, 0.0025]


def test_stability_matrix_dimension_cap(tmp_path):
    cfg = desk_config(tmp_path, n=8)
    with pytest.raises(DimensionTooLargeError):
        run_stability_matrix(cfg, ["weighted"], [1.0], [1.0], dim_cap=10)


def test_stability_matrix_table(tmp_path):
    cfg = desk_config(tmp_path, n=8)
    frame = run_stability_matrix(
        cfg, ["explicit", "split_product"], [1.0, 0.9], [0.95, 10.0], steps=50
    )

    assert list(frame.columns) == VERDICT_COLUMNS
    # the explicit scheme has no weights to scale
    assert len(frame) == 2 + 4
    split = frame[frame["scheme"] == "split_product"]
    at_threshold = split[np.isclose(split["sigma_b"], 0.5)]
    assert at_threshold["lemma1"].all()
    assert at_threshold["bounded"].all()
    assert at_threshold["expected_stable"].all()
    below = split[np.isclose(split["sigma_b"], 0.45)]
    assert not below["expected_stable"].any()

    explicit = frame[frame["scheme"] == "explicit"].set_index("tau")
    assert explicit["lemma1"].tolist() == [True, False]

    written = pd.read_csv(cfg.output_dir / "verdicts.csv")
    assert list(written.columns) == VERDICT_COLUMNS
    assert len(written) == 6


def test_stability_matrix_counts_failed_solves_as_blow_ups(tmp_path):
    cfg = desk_config(tmp_path, n=8, solver_max_iter=1)
    frame = run_stability_matrix(
        cfg, ["split_product"], [1.0], [1.0], steps=10, dense=False, write=False
    )

    assert frame["bounded"].tolist() == [False]
    assert frame["growth"].tolist() == [math.inf]


def test_stability_matrix_records_failed_dense_checks(tmp_path, monkeypatch):
    def not_symmetric(c, d, tau, dim_cap):
        raise NotNonNegativeError(f"{c.descriptor} is not symmetric")

    monkeypatch.setattr(harness, "check_lemma1", not_symmetric)
    cfg = desk_config(tmp_path, n=8)
    frame = run_stability_matrix(cfg, ["weighted"], [1.0], [1.0], steps=10, write=False)

    assert frame["lemma1"].tolist() == [False]
    assert frame["g_min_eigenvalue"].isna().all()
    assert frame["bounded"].all()


@pytest.mark.integration
def test_weighted_energy_is_conserved_on_desk_grid(tmp_path):
    cfg = desk_config(
        tmp_path, n=32, scheme="weighted", tau=0.005, final_time=2.5, solver_tol=1e-12
    )
    report = run_experiment(cfg, write=False)
    assert len(report.levels) == 501
    assert report.energy_drift() <= 1e-8


@pytest.mark.integration
def test_threshold_weights_keep_trajectories_bounded(tmp_path):
    cfg = desk_config(tmp_path, n=16)
    frame = run_stability_matrix(
        cfg, IMPLICIT_SCHEMES, [1.0], [1.0, 10.0], steps=1000, dense=False
    )
    assert len(frame) == 2 * len(IMPLICIT_SCHEMES)
    assert frame["bounded"].all()
    assert frame["expected_stable"].all()
    assert frame["lemma1"].isna().all()


@pytest.mark.integration
def test_dense_verdicts_at_threshold(tmp_path):
    cfg = desk_config(tmp_path, n=8)
    frame = run_stability_matrix(
        cfg, IMPLICIT_SCHEMES, [1.0, 0.9], [1.0, 10.0], steps=100
    )
    at_threshold = frame[frame["expected_stable"]]
    assert len(at_threshold) == 2 * len(IMPLICIT_SCHEMES)
    assert at_threshold["lemma1"].all()
    assert (at_threshold["g_min_eigenvalue"] >= -1e-10).all()


@pytest.mark.integration
@pytest.mark.parametrize(
    "scheme, low, high", [("weighted", 1.7, 2.3), ("split_product", 0.7, 1.5)]
)
def test_convergence_order(tmp_path, scheme, low, high):
    cfg = desk_config(
        tmp_path, n=32, initial=LOW_MODE, scheme=scheme, tau=0.01, final_time=0.5
    )
    table = run_convergence_sweep(cfg, [0.01, 0.005, 0.0025], write=False)
    for order in table.orders:
        assert low <= order <= high
    assert low <= table.eoc_order <= high


@pytest.mark.integration
def test_error_ordering_between_schemes(tmp_path):
    def errors(**scheme):
        cfg = desk_config(tmp_path, n=32, tau=0.005, final_time=0.5, **scheme)
        # level 1 comes from the shared initialization, so compare from level 2 on
        return run_experiment(cfg, write=False).levels["eps_2"].to_numpy()[2:]

    weighted = errors(scheme="weighted")
    assert (errors(scheme="split_product") > weighted).all()
    assert (errors(scheme="weighted", sigma=0.5) > weighted).all()
