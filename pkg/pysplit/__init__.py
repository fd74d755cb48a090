from pysplit.lattice import GridSpec, Field, inner_product, norm, weighted_norm
from pysplit.operators import PlateCoefficients, PlateOperators, plate_operators
from pysplit.krylov import SolveReport, cg_solve, record_solves
from pysplit.steppers import SchemeConfig, ThreeLevelState, Stepper, canonical_form
from pysplit.stability import StabilityVerdict, check_lemma1, explicit_threshold
from pysplit.oracle import SpectralExpansion, eigenpair, expand, exact_solution
from pysplit.diagnostics import EnergyRecord, energy
from pysplit.config import ExperimentConfig, load_config
from pysplit.harness import (
    RunReport,
    run_experiment,
    run_convergence_sweep,
    run_stability_matrix,
)

__all__ = [
    "GridSpec",
    "Field",
    "inner_product",
    "norm",
    "weighted_norm",
    "PlateCoefficients",
    "PlateOperators",
    "plate_operators",
    "SolveReport",
    "cg_solve",
    "record_solves",
    "SchemeConfig",
    "ThreeLevelState",
    "Stepper",
    "canonical_form",
    "StabilityVerdict",
    "check_lemma1",
    "explicit_threshold",
    "SpectralExpansion",
    "eigenpair",
    "expand",
    "exact_solution",
    "EnergyRecord",
    "energy",
    "ExperimentConfig",
    "load_config",
    "RunReport",
    "run_experiment",
    "run_convergence_sweep",
    "run_stability_matrix",
]
__version__ = "0.1.0"
