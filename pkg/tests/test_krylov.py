from concurrent.futures import ThreadPoolExecutor
from contextvars import copy_context

import numpy as np
import pytest

from pysplit.errors import IterationLimitError, NumericalBreakdownError
from pysplit.krylov import cg_solve, default_max_iter, record_solves
from pysplit.lattice import Field, GridSpec
from pysplit.linear_map import LinearCombination, identity, scaled
from pysplit.operators import laplacian
from pysplit.stability import dense_matrix


def test_cg_matches_dense_solve(spec8, rng):
    system = LinearCombination([(1.0, identity(spec8)), (0.01, laplacian(spec8))])
    rhs = Field.random(spec8, rng)

    solution, report = cg_solve(system, rhs, tol=1e-12)

    expected = np.linalg.solve(dense_matrix(system), rhs.values.ravel())
    np.testing.assert_allclose(solution.values.ravel(), expected, rtol=1e-9)
    assert report.converged
    assert report.final_relative_residual <= 1e-12
    assert 0 < report.iterations <= default_max_iter(spec8.size)


def test_cg_zero_rhs_returns_zero(spec4):
    solution, report = cg_solve(laplacian(spec4), Field.zeros(spec4))
    assert solution.max_abs() == 0.0
    assert report.iterations == 0
    assert report.converged


def test_cg_iteration_limit_carries_report(spec8, rng):
    with pytest.raises(IterationLimitError) as info:
        cg_solve(laplacian(spec8), Field.random(spec8, rng), tol=1e-14, max_iter=2)
    assert info.value.report is not None
    assert info.value.report.iterations == 2
    assert not info.value.report.converged


def test_cg_detects_negative_curvature(spec4, rng):
    with pytest.raises(NumericalBreakdownError):
        cg_solve(scaled(identity(spec4), -1.0), Field.random(spec4, rng))


def test_cg_rejects_non_finite_rhs(spec4):
    rhs = Field(spec4, np.full(9, np.nan))
    with pytest.raises(NumericalBreakdownError):
        cg_solve(identity(spec4), rhs)


def test_cg_rejects_non_positive_tolerance(spec4):
    with pytest.raises(ValueError):
        cg_solve(identity(spec4), Field.zeros(spec4), tol=0.0)


def test_default_iteration_cap():
    assert default_max_iter(100) == 200
    assert default_max_iter(961) == 410


def test_recorders_nest(spec4, rng):
    rhs = Field.random(spec4, rng)
    with record_solves() as outer:
        cg_solve(identity(spec4), rhs)
        with record_solves() as inner:
            cg_solve(laplacian(spec4), rhs)
    assert [r.descriptor for r in outer] == ["I", "A"]
    assert [r.descriptor for r in inner] == ["A"]


def test_nothing_is_recorded_outside_a_recorder(spec4, rng):
    cg_solve(identity(spec4), Field.random(spec4, rng))
    with record_solves() as records:
        pass
    assert records == []


def test_recorder_follows_copied_context_into_threads(spec4, rng):
    rhs = Field.random(spec4, rng)
    with record_solves() as records:
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = [
                pool.submit(copy_context().run, cg_solve, laplacian(spec4), rhs)
                for _ in range(3)
            ]
            for f in futures:
                f.result()
    assert len(records) == 3


@pytest.mark.parametrize("n", [4, 8, 16])
@pytest.mark.parametrize("shift", [None, 0.01])
def test_cg_converges_within_twice_the_dimension(rng, n, shift):
    spec = GridSpec.unit_square(n)
    system = laplacian(spec)
    if shift is not None:
        system = LinearCombination([(1.0, identity(spec)), (shift, system)])

    rhs = Field.random(spec, rng)
    _, report = cg_solve(system, rhs, tol=1e-10, max_iter=2 * spec.size)

    assert report.converged
    assert report.iterations <= 2 * spec.size
