#!/usr/bin/env python3
import argparse
import logging
import sys

from .config import DEFAULT_PERMUTATIONS, get_log_level
from .errors import IntervalSarError


def configure_logging(verbose: bool = False) -> None:
    """Send log records to stderr; stdout is reserved for JSON results."""
    level = logging.DEBUG if verbose else get_log_level()
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _add_seed_jobs(parser) -> None:
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Random seed (default: INTERVAL_SAR_SEED or 20240917)",
    )
    parser.add_argument(
        "--jobs",
        "--threads",
        type=int,
        default=None,
        help="Worker count (default: INTERVAL_SAR_JOBS or available cores)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="interval-sar",
        description="Constrained spatial autoregressive regression for interval-valued data: build weights, test spatial autocorrelation, fit ICSM/ICM/ISM, predict held-out intervals and replicate the simulation study.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    # weights
    weights = sub.add_parser("weights", help="Build a spatial weight matrix")
    kinds = weights.add_subparsers(dest="kind", metavar="KIND")
    kinds.required = True

    rook_p = kinds.add_parser("rook", help="Rook contiguity on a lattice")
    rook_p.add_argument("--rows", type=int, required=True)
    rook_p.add_argument("--cols", type=int, required=True)

    block_p = kinds.add_parser("block", help="Equal weights within districts")
    block_p.add_argument("--districts", type=int, required=True)
    block_p.add_argument("--members", type=int, required=True)

    inv_p = kinds.add_parser("invdist", help="Inverse great-circle distance, k nearest within d0 km")
    inv_p.add_argument("--coords", required=True, help="CSV with id,lon,lat")
    inv_p.add_argument("--k", type=int, required=True)
    inv_p.add_argument("--d0", type=float, required=True, help="Distance threshold in km")

    sel_p = kinds.add_parser("select", help="Choose k and d0 by maximal Moran's I, write the chosen matrix")
    sel_p.add_argument("--data", required=True, help="Dataset CSV")
    sel_p.add_argument("--coords", help="CSV with id,lon,lat (default: lon,lat columns of the dataset)")
    sel_p.add_argument("--column", default="yc", help="yc, yr or a numeric dataset column (default: yc)")
    sel_p.add_argument("--k-max", type=int, default=5)

    for p in (rook_p, block_p, inv_p, sel_p):
        p.add_argument("--normalize", action="store_true", help="Row-normalize the matrix")
        p.add_argument("-o", "--output", required=True, help="Triplet CSV to write")

    # moran
    moran = sub.add_parser("moran", help="Moran's I with a permutation test")
    moran.add_argument("--data", required=True, help="Dataset CSV")
    moran.add_argument("--weights", required=True, help="Triplet weight CSV")
    moran.add_argument(
        "--column", default="yc", help="yc, yr, residual (needs --model) or a numeric dataset column"
    )
    moran.add_argument("--model", dest="model_file", help="Model JSON whose center residuals are tested")
    moran.add_argument("--n-perm", type=int, default=DEFAULT_PERMUTATIONS)
    moran.add_argument("--alternative", choices=["greater", "less", "two-sided"], default="greater")
    moran.add_argument("--scatter-out", help="Write Moran scatter data (id,z,lag) to this CSV")
    _add_seed_jobs(moran)

    # fit
    fit_p = sub.add_parser("fit", help="Fit ICSM, ICM or ISM on the training rows")
    fit_p.add_argument("--data", required=True, help="Dataset CSV (rows marked split=test are held out)")
    fit_p.add_argument("--weights", help="Triplet weight CSV on all dataset rows (not needed for icm)")
    fit_p.add_argument("--model", choices=["icsm", "icm", "ism"], default="icsm")
    fit_p.add_argument("--rho-min", type=float, default=-1.0)
    fit_p.add_argument("--rho-max", type=float, default=1.0)
    fit_p.add_argument("--rho-step", type=float, default=0.01)
    fit_p.add_argument("-o", "--output", required=True, help="Model JSON to write")
    fit_p.add_argument("--jobs", "--threads", type=int, default=None, help="Threads for the rho grid")

    # predict
    pred_p = sub.add_parser("predict", help="Predict the test rows of a dataset")
    pred_p.add_argument("--model", dest="model_file", required=True, help="Model JSON from 'fit'")
    pred_p.add_argument("--data", required=True, help="Dataset CSV with a split column")
    pred_p.add_argument("--weights", help="Triplet weight CSV on all dataset rows")
    pred_p.add_argument("--method", choices=["tc", "bp"], default="bp")
    pred_p.add_argument("--force", action="store_true", help="Predict even if the training data hash differs")
    pred_p.add_argument("-o", "--output", required=True, help="Prediction CSV to write")

    # simulate
    sim = sub.add_parser("simulate", help="Run Monte-Carlo scenarios")
    sim.add_argument("scenario", nargs="?", help="Scenario JSON (object or list of objects)")
    sim.add_argument(
        "--paper-matrix",
        "--standard-matrix",
        dest="paper_matrix",
        action="store_true",
        help="Run the 36 standard scenarios",
    )
    sim.add_argument("--reps", type=int, default=None, help="Override replications per scenario")
    sim.add_argument("--rho-step", type=float, default=None, help="Override the rho grid step (grid stays -1..1)")
    sim.add_argument("-o", "--output", help="Directory for report files")
    sim.add_argument("--write-geo-dataset", metavar="PATH", help="Write a synthetic station dataset CSV")
    sim.add_argument("--write-geo-coords", metavar="PATH", help="Also write the station coordinates (id,lon,lat)")
    sim.add_argument("--geo-units", type=int, default=80)
    _add_seed_jobs(sim)

    sub.add_parser("version", help="Print the version")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "simulate" and args.scenario and args.paper_matrix:
        parser.error("a scenario file and --paper-matrix are mutually exclusive")
    if args.command == "simulate" and args.write_geo_coords and not args.write_geo_dataset:
        parser.error("--write-geo-coords needs --write-geo-dataset")

    configure_logging(args.verbose)

    from . import commands

    handlers = {
        "weights": commands.handle_weights,
        "moran": commands.handle_moran,
        "fit": commands.handle_fit,
        "predict": commands.handle_predict,
        "simulate": commands.handle_simulate,
        "version": commands.handle_version,
    }
    try:
        code = handlers[args.command](args)
    except IntervalSarError as e:
        print(f"{e.name}: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except OSError as e:
        print(f"FormatError: {e}", file=sys.stderr)
        sys.exit(2)
    sys.exit(code)


if __name__ == "__main__":
    main()
