"""
Command-line entry point.

    pysplit run --scheme split_product --tau 0.005 --out out/split
    pysplit sweep --scheme weighted --taus 0.01 0.005 0.0025
    pysplit stability --grid 8 --schemes weighted explicit --taus 1 10
    pysplit oracle --times 0 0.25 0.5
    pysplit probe --full-scale

Exit codes: 0 success, 2 configuration error or operators that are not
symmetric non-negative, 3 solver failure, 4 instability in a run expected
to be stable.
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from pysplit import __version__
from pysplit.config import (
    DEFAULT_TAU_LADDER,
    FULL_GRID,
    ExperimentConfig,
    config_from_mapping,
    merge_overrides,
    read_config_mapping,
)
from pysplit.errors import (
    ConfigError,
    DimensionTooLargeError,
    InstabilityError,
    IterationLimitError,
    NotNonNegativeError,
    NumericalBreakdownError,
    StepError,
)
from pysplit.harness import (
    oracle_snapshots,
    probe_histories,
    run_convergence_sweep,
    run_experiment,
    run_stability_matrix,
)
from pysplit.steppers import SCHEMES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_UNSTABLE = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment configuration")
    common.add_argument("--out", help="output directory, overrides [output].output_dir")
    common.add_argument("--tau", type=float, help="time step")
    common.add_argument("--scheme", choices=SCHEMES, help="time stepping scheme")
    common.add_argument(
        "--sigma", type=float, help="weight of weighted and additive schemes"
    )
    common.add_argument("--sigma-a", type=float, help="regularization weight of A*A")
    common.add_argument("--sigma-b", type=float, help="regularization weight of B")
    common.add_argument("--grid", type=int, help="subdivisions N in both directions")
    common.add_argument(
        "--full-scale", action="store_true", help="use the full 256 x 256 grid"
    )
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )

    parser = argparse.ArgumentParser(
        prog="pysplit",
        description="Splitting schemes for plate vibration problems.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser(
        "run", parents=[common], help="run one scheme against the oracle"
    )

    sweep = commands.add_parser(
        "sweep", parents=[common], help="convergence order in time"
    )
    sweep.add_argument(
        "--taus",
        type=float,
        nargs="+",
        default=list(DEFAULT_TAU_LADDER),
        help="time steps",
    )
    sweep.add_argument("--workers", type=int, default=1, help="concurrent runs")

    stability = commands.add_parser(
        "stability", parents=[common], help="dense and empirical stability verdicts"
    )
    stability.add_argument(
        "--schemes", nargs="+", choices=SCHEMES, default=list(SCHEMES)
    )
    stability.add_argument(
        "--factors",
        type=float,
        nargs="+",
        default=[1.0, 0.9],
        help="multipliers of the threshold weights",
    )
    stability.add_argument(
        "--taus", type=float, nargs="+", default=[0.95, 1.05, 10.0], help="time steps"
    )
    stability.add_argument(
        "--absolute",
        action="store_true",
        help="time steps are absolute, not multiples of tau_0",
    )
    stability.add_argument(
        "--steps", type=int, default=200, help="steps per trajectory"
    )
    stability.add_argument(
        "--no-dense", action="store_true", help="skip the dense eigenvalue check"
    )

    oracle = commands.add_parser(
        "oracle", parents=[common], help="exact solution snapshots"
    )
    oracle.add_argument("--times", type=float, nargs="+", help="snapshot times")

    commands.add_parser(
        "probe", parents=[common], help="deflection histories at probe points"
    )

    return parser


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    The file configuration, or defaults, with command-line overrides applied.

    Overrides are merged before validation, so they can repair a file.
    """
    data = read_config_mapping(args.config) if args.config else {}
    grid = args.grid
    if grid is None and args.full_scale:
        grid = FULL_GRID
    merged = merge_overrides(
        data,
        tau=args.tau,
        scheme=args.scheme,
        sigma=args.sigma,
        sigma_a=args.sigma_a,
        sigma_b=args.sigma_b,
        grid=grid,
        output_dir=args.out,
    )

    return config_from_mapping(merged)


def dispatch(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    out = cfg.output_dir
    if args.command == "run":
        report = run_experiment(cfg)
        print(
            f"{cfg.scheme.scheme}: max eps_2 {report.max_error():.6e}, "
            f"energy drift {report.energy_drift():.3e}, "
            f"{report.total_iterations} CG iterations -> {out}"
        )
        if report.unexpected_instability:
            raise InstabilityError(
                f"{cfg.scheme.scheme} blew up at level {report.blow_up_level}"
            )
    elif args.command == "sweep":
        table = run_convergence_sweep(cfg, args.taus, workers=args.workers)
        print(table.frame.to_string(index=False))
        print(f"least-squares order {table.eoc_order:.3f}")
    elif args.command == "stability":
        verdicts = run_stability_matrix(
            cfg,
            args.schemes,
            args.factors,
            args.taus,
            relative=not args.absolute,
            steps=args.steps,
            dense=not args.no_dense,
        )
        print(verdicts.to_string(index=False))
        broken = verdicts[verdicts["expected_stable"] & ~verdicts["bounded"]]
        if not broken.empty:
            raise InstabilityError(
                f"{len(broken)} configurations expected stable were not bounded"
            )
    elif args.command == "oracle":
        snapshots = oracle_snapshots(cfg, args.times)
        print(f"{snapshots['t'].nunique()} snapshots -> {out / 'snapshots.csv'}")
    elif args.command == "probe":
        probes = probe_histories(cfg)
        print(f"{len(probes)} levels -> {out / 'probes.csv'}")

    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        cfg = resolve_config(args)
        return dispatch(args, cfg)
    except (ConfigError, DimensionTooLargeError) as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except NotNonNegativeError as e:
        logger.error("operator assumption violated: %s", e)
        return EXIT_CONFIG
    except (StepError, IterationLimitError, NumericalBreakdownError) as e:
        logger.error("solver failure: %s", e)
        return EXIT_SOLVER
    except InstabilityError as e:
        logger.error("instability: %s", e)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
