import math

import numpy as np
import pytest

from pysplit.config import ExperimentConfig, InitialCondition, OutputConfig
from pysplit.lattice import Field, GridSpec
from pysplit.operators import PlateCoefficients, plate_operators
from pysplit.steppers import SchemeConfig

GAMMA1 = 1.0
GAMMA2 = 0.05
SINGLE_NODE_Q = 256.0 + GAMMA1 + 16.0 * GAMMA2


@pytest.fixture
def single():
    return GridSpec.unit_square(2)


@pytest.fixture
def spec4():
    return GridSpec.unit_square(4)


@pytest.fixture
def spec8():
    return GridSpec.unit_square(8)


@pytest.fixture
def ops_single(single):
    return plate_operators(single)


@pytest.fixture
def ops4(spec4):
    return plate_operators(spec4)


@pytest.fixture
def ops8(spec8):
    return plate_operators(spec8)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def one(single):
    return Field(single, [1.0])


def directional_eigenvalues(spec, k1, k2):
    lam1 = 4.0 / spec.h1**2 * math.sin(k1 * math.pi / (2 * spec.n1)) ** 2
    lam2 = 4.0 / spec.h2**2 * math.sin(k2 * math.pi / (2 * spec.n2)) ** 2
    return lam1, lam2


def recurrence(first, second, coefficient, steps):
    """Amplitudes `a[0..steps]` of `a[n+1] = coefficient a[n] - a[n-1]`."""
    amplitudes = [first, second]
    for _ in range(steps - 1):
        amplitudes.append(coefficient * amplitudes[-1] - amplitudes[-2])
    return amplitudes


def scheme_symbol(scheme, lam1, lam2, tau, p=2, coefficients=None):
    """The eigenvalue of the threshold-weighted scheme operator `D~` on one mode."""
    coefficients = coefficients or PlateCoefficients()
    g1, g2 = coefficients.gamma1, coefficients.gamma2
    lam = lam1 + lam2
    b = g1 + g2 * lam
    r = b + lam**2
    if scheme == "explicit":
        return r
    if scheme in ("weighted", "regularized_q"):
        return r / (1 + 0.25 * tau**2 * r)
    if scheme == "additive_averaged":
        mu = (2 / 4 + 1e-12) * tau**2
        return lam**2 / (1 + mu * lam**2) + b / (1 + mu * b)
    b_reg = b / (1 + 0.5 * tau**2 * b)
    if scheme == "split_product":
        sa = math.sqrt(0.5)
        return lam**2 / (1 + sa * tau * lam) ** 2 + b_reg
    if scheme == "split_product_bsplit":
        sa = math.sqrt(0.5)
        return (
            lam**2 / (1 + sa * tau * lam) ** 2
            + g1 / (1 + tau**2 * g1)
            + g2 * lam / (1 + tau**2 * g2 * lam)
        )
    if scheme == "split_product_aasplit":
        sa = math.sqrt(p / 2)
        factor = lam / math.sqrt(p)
        return p * factor**2 / (1 + sa * tau * factor) ** 2 + b_reg
    if scheme == "split_factor_sum":
        sa = 2 / math.sqrt(2)
        a_reg = lam1 / (1 + sa * tau * lam1) + lam2 / (1 + sa * tau * lam2)
        return a_reg**2 + b_reg
    raise ValueError(scheme)


def desk_config(tmp_path, n=8, initial=None, **scheme):
    return ExperimentConfig(
        grid=GridSpec.unit_square(n),
        scheme=SchemeConfig(**scheme),
        initial_condition=initial or InitialCondition(),
        output=OutputConfig(output_dir=str(tmp_path / "out")),
    )
