"""Command line interface.

    spectramoment check     --fb fb.json --sigma sigma.json
    spectramoment factorize --fb fb.json --lam lam.json
    spectramoment estimate  --fb fb.json --prior prior.json --sigma sigma.json --out r.json
    spectramoment estimate  --fb fb.json --prior prior.json --sigma sigma.json --format csv
    spectramoment simulate  --scenario scenario.json --out sigma_hat.json
    spectramoment probe     --fb fb.json --prior prior.json --trials 20 --seed 1
    spectramoment spectrum  --fb fb.json --prior prior.json --lam lam.json --format csv

Exit codes: 0 success, 1 domain failure (infeasible target, no convergence, violated
condition), 2 usage or parse failure.
"""
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import argparse
import json
import logging
import os
import sys

import numpy as np

from .estimator import (
    Prior,
    SolveOptions,
    UnsupportedFilterBankError,
    density_eval,
    prior_condition_probe,
    solve_estimation,
)
from .filterbank import FilterBank, new_filter_bank
from .moment_space import (
    DomainError,
    MomentDimensionError,
    MomentSpace,
    build_moment_space,
    feasibility_check,
    membership_L_plus,
)
from .numerics import DEFAULT_GRID_N, GridSpec, UnstableMatrixError
from .serialization import (
    MatrixFormatError,
    decode_matrix,
    dump_json,
    load_json,
    write_spectrum_csv,
)
from .simulate import (
    Scenario,
    TruthModel,
    UnstableTruthModelError,
    prepare_target,
    simulate_scenario,
)
from .snooper import BadFilterBankError
from .spectral_factor import (
    NoStabilizingSolutionError,
    factorization_residual,
    solve_dare,
)
from .watchdog import SolverError

GRID_ENV_VAR = "SPECTRAMOMENT_GRID_N"

USAGE_ERRORS = (
    BadFilterBankError,
    MatrixFormatError,
    json.JSONDecodeError,
    KeyError,
    OSError,
    ValueError,
    TypeError,
)
DOMAIN_ERRORS = (
    DomainError,
    MomentDimensionError,
    NoStabilizingSolutionError,
    SolverError,
    UnstableMatrixError,
    UnstableTruthModelError,
    UnsupportedFilterBankError,
)


class UsageError(Exception):
    pass


def _grid(args: argparse.Namespace) -> GridSpec:
    if args.grid_n is not None:
        return GridSpec(N=args.grid_n)
    env = os.environ.get(GRID_ENV_VAR)
    if env:
        try:
            return GridSpec(N=int(env))
        except ValueError as e:
            raise UsageError(f"{GRID_ENV_VAR}={env!r} is not a valid grid size.") from e
    return GridSpec(N=DEFAULT_GRID_N)


def _unwrap(obj: Any, *keys: str) -> Any:
    if isinstance(obj, dict):
        for key in keys:
            if key in obj:
                return obj[key]
        raise KeyError(f"Expected one of the keys {keys}.")
    return obj


def read_filter_bank(obj: Dict[str, Any]) -> FilterBank:
    """{"A": matrix, "B": matrix}"""
    return new_filter_bank(decode_matrix(obj["A"]), decode_matrix(obj["B"]))


def _decode_scalar(obj: Any) -> complex:
    if isinstance(obj, (list, tuple)):
        if len(obj) != 2:
            raise MatrixFormatError(f"A complex number is a pair [re, im], got {obj!r}.")
        return complex(float(obj[0]), float(obj[1]))
    return complex(float(obj))


def read_prior(obj: Dict[str, Any], grid: GridSpec, m: int) -> Prior:
    """{"kind": "scalar" | "matrix"} plus exactly one of "constant", "fourier" (the list
    [R_0, R_1, ...]) or "samples" (one value per grid angle)."""
    kind = obj.get("kind", "scalar")
    if kind not in ("scalar", "matrix"):
        raise ValueError(f"Prior kind must be scalar or matrix, got {kind!r}.")
    given = [key for key in ("constant", "fourier", "samples") if key in obj]
    if len(given) != 1:
        raise ValueError("A prior needs exactly one of constant, fourier or samples.")

    def coefficient(value: Any) -> Any:
        if kind == "scalar":
            return _decode_scalar(value)
        if np.ndim(value) == 0:
            return float(value) * np.eye(m)
        return decode_matrix(value)

    if "constant" in obj:
        return Prior.constant(coefficient(obj["constant"]), grid)
    if "fourier" in obj:
        return Prior.from_fourier([coefficient(c) for c in obj["fourier"]], grid)
    values = [coefficient(v) for v in obj["samples"]]
    if len(values) != grid.N:
        raise ValueError(
            f"Prior has {len(values)} samples but the grid has N = {grid.N}."
        )
    return Prior.from_samples(np.array(values), grid, kind=kind)


def read_scenario(obj: Dict[str, Any], fb: Optional[FilterBank] = None) -> Scenario:
    """{"fb", "truth": "white" | {"F", "G", "H", "D", "noise_cov"}, "T", "seed",
    "real_valued", "burn_in"}; fb overrides the bank of the file."""
    fb = fb or read_filter_bank(obj["fb"])
    truth_obj = obj.get("truth", "white")
    if truth_obj == "white":
        truth = TruthModel.white_noise(fb.m)
    else:
        keys = ("F", "G", "H", "D", "noise_cov")
        truth = TruthModel.from_arrays(*(decode_matrix(truth_obj[k]) for k in keys))
    return Scenario(
        fb=fb,
        truth=truth,
        T=int(obj["T"]),
        seed=int(obj["seed"]),
        real_valued=bool(obj.get("real_valued", False)),
        burn_in=None if obj.get("burn_in") is None else int(obj["burn_in"]),
    )


def _read_witnesses(path: Optional[str]) -> List[Tuple[np.ndarray, np.ndarray]]:
    if path is None:
        return []
    obj = load_json(path)
    items = obj if isinstance(obj, list) else [obj]
    return [(decode_matrix(w["C"]), decode_matrix(w["V"])) for w in items]


def _moment_space(args: argparse.Namespace) -> MomentSpace:
    fb = read_filter_bank(load_json(args.fb))
    return build_moment_space(fb, _grid(args))


def cmd_check(args: argparse.Namespace) -> int:
    ms = _moment_space(args)
    Sigma = decode_matrix(_unwrap(load_json(args.sigma), "Sigma", "sigma"))
    report = feasibility_check(ms, Sigma)
    dump_json(report, args.out)
    return 0 if report["feasible"] else 1


def cmd_factorize(args: argparse.Namespace) -> int:
    ms = _moment_space(args)
    Lam = decode_matrix(_unwrap(load_json(args.lam), "Lambda", "lambda"))
    member, margin = membership_L_plus(ms, Lam, refine=True)
    if not member:
        raise DomainError(f"Lambda is not in L_+, margin {margin}.")
    sol = solve_dare(ms.fb, Lam)
    report = {
        "P": sol.P,
        "L": sol.L,
        "C": sol.C,
        "dare_residual": sol.residual,
        "closed_loop_radius": sol.closed_loop_radius,
        "factorization_residual": factorization_residual(ms, Lam, sol.C),
    }
    dump_json(report, args.out)
    return 0


def _solve_options(args: argparse.Namespace) -> SolveOptions:
    if args.multistart > 1 and args.seed is None:
        raise UsageError("Multistart draws random starts and needs an explicit --seed.")
    return SolveOptions(
        tol_residual=args.tol,
        max_iters=args.max_iters,
        multistart=args.multistart,
        seed=args.seed or 0,
        report_every_n_steps=args.report_every,
    )


def cmd_estimate(args: argparse.Namespace) -> int:
    opts = _solve_options(args)
    ms = _moment_space(args)
    prior = read_prior(load_json(args.prior), ms.grid, ms.fb.m)
    Sigma = decode_matrix(_unwrap(load_json(args.sigma), "Sigma", "sigma"))
    report = solve_estimation(ms, prior, Sigma, opts)
    param = report.C if report.C is not None else report.lam
    density = density_eval(ms, prior, param)
    if args.format == "csv":
        if args.out is None:
            write_spectrum_csv(density, sys.stdout)
        else:
            with open(args.out, "w", newline="") as stream:
                write_spectrum_csv(density, stream)
        return 0 if report.converged else 1

    dump_json(report.to_dict(), args.out)
    if args.out is not None:
        with open(Path(args.out).with_suffix(".csv"), "w", newline="") as stream:
            write_spectrum_csv(density, stream)
    return 0 if report.converged else 1


def cmd_simulate(args: argparse.Namespace) -> int:
    fb = read_filter_bank(load_json(args.fb)) if args.fb else None
    sc = read_scenario(load_json(args.scenario), fb)
    ms = build_moment_space(sc.fb, _grid(args))
    Sigma_hat, diagnostics = simulate_scenario(sc)
    Sigma, target_report = prepare_target(ms, Sigma_hat)
    report = {
        "Sigma_hat": Sigma_hat,
        "Sigma": Sigma,
        "diagnostics": diagnostics,
        "target": target_report,
    }
    dump_json(report, args.out)
    return 0 if target_report["feasible"] else 1


def cmd_probe(args: argparse.Namespace) -> int:
    ms = _moment_space(args)
    prior = read_prior(load_json(args.prior), ms.grid, ms.fb.m)
    report = prior_condition_probe(
        ms, prior, args.trials, args.seed, witnesses=_read_witnesses(args.witness)
    )
    dump_json(report, args.out)
    return 0 if report["condition_holds"] else 1


def cmd_spectrum(args: argparse.Namespace) -> int:
    ms = _moment_space(args)
    prior = read_prior(load_json(args.prior), ms.grid, ms.fb.m)
    Lam = decode_matrix(_unwrap(load_json(args.lam), "Lambda", "lambda"))
    density = density_eval(ms, prior, ms.parameter_point(Lam))
    if args.format == "json":
        dump_json({"theta": ms.grid.angles, "values": density.values}, args.out)
    elif args.out is None:
        write_spectrum_csv(density, sys.stdout)
    else:
        with open(args.out, "w", newline="") as stream:
            write_spectrum_csv(density, stream)
    return 0


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid-n", type=int, default=None, help="Quadrature grid size.")
    common.add_argument("--out", default=None, help="Output file, STDOUT if omitted.")

    parser = argparse.ArgumentParser(
        prog="spectramoment",
        description="Spectral estimation from filter bank state covariances.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    p = add("check", cmd_check, "Check that Sigma is a feasible target.")
    p.add_argument("--fb", required=True)
    p.add_argument("--sigma", required=True)

    p = add("factorize", cmd_factorize, "Spectral factor of G^* Lambda G.")
    p.add_argument("--fb", required=True)
    p.add_argument("--lam", required=True)

    p = add("estimate", cmd_estimate, "Solve the moment equations for a prior.")
    p.add_argument("--fb", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--sigma", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iters", type=_positive_int, default=100)
    p.add_argument("--multistart", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report-every", type=_positive_int, default=10)
    p.add_argument(
        "--format",
        choices=("json", "csv"),
        default="json",
        help="json: the report, plus the density as CSV next to --out if given."
        " csv: only the density.",
    )

    p = add("simulate", cmd_simulate, "Simulate a scenario and estimate Sigma.")
    p.add_argument("--scenario", required=True)
    p.add_argument("--fb", default=None, help="Overrides the bank of the scenario.")

    p = add("probe", cmd_probe, "Probe the trace condition of a matrix prior.")
    p.add_argument("--fb", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--trials", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--witness", default=None, help="JSON with extra C and V pairs.")

    p = add("spectrum", cmd_spectrum, "Sample the density of a parameter Lambda.")
    p.add_argument("--fb", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--lam", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        logging.error(str(e))
        return 2
    except DOMAIN_ERRORS as e:
        report: Dict[str, Any] = {"error": type(e).__name__, "message": str(e)}
        if isinstance(e, SolverError):
            report["residual_history"] = e.residual_history
        dump_json(report, args.out)
        return 1
    except USAGE_ERRORS as e:
        logging.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
