"""Command-line surface: parameter derivation, protocol runs, audits, benchmarks.

Reports are self-describing (they embed the resolved parameters and the seed)
and byte-identical across reruns with the same configuration and seed; flags
take precedence over the ``SHUFFLECOUNT_SEED`` environment variable. Exit
codes: 0 pass, 1 fail, 2 usage or invalid input, 3 audit inconclusive.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audit import (
    DatasetSummary,
    check_geo_ratio,
    check_poi_ratio,
    divergence_audit,
    exact_mean_messages,
    exact_mse,
    measure_comm,
    measure_mse,
    mse_bound,
)
from .composition import run_histogram, run_real_sum, split_budget
from .dist import RandomSource
from .errors import (
    AuditInconclusiveError,
    DegenerateInputError,
    ParameterError,
)
from .params import (
    ProtocolParams,
    check_condition,
    derive_params,
    minimal_params,
)
from .protocol import estimate_trials, run_counting

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_INCONCLUSIVE = 3

SEED_ENV_VAR = "SHUFFLECOUNT_SEED"


def _emit(args, report: dict, rows: list[dict] | None = None) -> None:
    if args.format == "csv":
        if rows is None:
            rows = [_flatten(report)]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _flatten(report: dict, prefix: str = "") -> dict:
    flat: dict = {}
    for key, value in report.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{name}."))
        elif isinstance(value, (list, tuple)):
            flat[name] = " ".join(str(v) for v in value)
        else:
            flat[name] = value
    return flat


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    raise ParameterError(
        f"a seed is required: pass --seed or set {SEED_ENV_VAR}"
    )


def _explicit_params(args, n_users: int) -> ProtocolParams:
    """Build a parameter set from explicit audit flags.

    Pad count and flood mean default to the cheapest feasible values; with
    ``--q 0`` (never feasible) they fall back to the values a drop
    probability of 0.01 would get, so the audit isolates the effect of
    disabling drops.
    """
    if args.s is not None and args.lam is not None:
        return ProtocolParams(
            n_users=n_users,
            epsilon=args.eps,
            noise_epsilon=args.eps_prime,
            drop_prob=args.q,
            pad_count=args.s,
            flood_mean=args.lam,
        )
    reference_q = args.q if args.q > 0.0 else 0.01
    base = minimal_params(args.eps, args.eps_prime, reference_q, n_users)
    return ProtocolParams(
        n_users=n_users,
        epsilon=args.eps,
        noise_epsilon=args.eps_prime,
        drop_prob=args.q,
        pad_count=args.s if args.s is not None else base.pad_count,
        flood_mean=args.lam if args.lam is not None else base.flood_mean,
    )


def _read_values(path: str, cast):
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            values.append(cast(line))
    return values


def _require_feasible(params: ProtocolParams) -> None:
    check = check_condition(params)
    if not check.ok:
        raise ParameterError(
            f"parameters violate feasibility clauses {list(check.violations)}"
        )


def _cmd_params(args) -> int:
    if args.eps_prime is not None or args.q is not None:
        # validation mode: check an explicit set instead of deriving one
        if args.eps_prime is None or args.q is None:
            raise ParameterError("--eps-prime and --q must be given together")
        params = _explicit_params(args, args.n)
        check = check_condition(params)
        report = {
            "mode": "check",
            "params": params.to_dict(),
            "ok": check.ok,
            "violations": list(check.violations),
            "pad_threshold": check.pad_threshold,
            "flood_threshold": check.flood_threshold,
        }
        _emit(args, report)
        return EXIT_PASS if check.ok else EXIT_FAIL
    params = derive_params(args.eps, args.rho, args.n)
    report = {
        "mode": "derive",
        "params": params.to_dict(),
        "ok": True,
        "expected_messages_per_user_x1": exact_mean_messages(params, 1),
        "law_mse_all_ones": exact_mse(params, params.n_users),
    }
    _emit(args, report)
    return EXIT_PASS


def _count_inputs(args) -> list[int]:
    if args.input_file:
        xs = _read_values(args.input_file, int)
        if any(x not in (0, 1) for x in xs):
            raise ParameterError("count inputs must be bits")
        return xs
    if args.ones is None:
        raise ParameterError("pass --ones/--zeros or --input-file")
    zeros = args.zeros if args.zeros is not None else 0
    return [1] * args.ones + [0] * zeros


def _cmd_run_count(args) -> int:
    seed = _seed(args)
    xs = _count_inputs(args)
    params = derive_params(args.eps, args.rho, len(xs))
    _require_feasible(params)
    run = run_counting(xs, params, RandomSource(seed))
    per_user = np.asarray(run.messages_per_user)
    true_value = int(sum(xs))
    report = {
        "subcommand": "run count",
        "seed": seed,
        "params": params.to_dict(),
        "inputs": {"n": len(xs), "ones": true_value},
        "estimate": run.estimate,
        "true_value": true_value,
        "error": run.estimate - true_value,
        "view": {"plus": run.view.plus_count, "minus": run.view.minus_count},
        "messages_per_user": {
            "mean": float(per_user.mean()),
            "min": int(per_user.min()),
            "max": int(per_user.max()),
            "total": int(per_user.sum()),
        },
    }
    rows = [
        {"user": i, "input": x, "messages": m}
        for i, (x, m) in enumerate(zip(xs, run.messages_per_user))
    ]
    _emit(args, report, rows)
    return EXIT_PASS


def _cmd_run_realsum(args) -> int:
    seed = _seed(args)
    rng = RandomSource(seed)
    if args.input_file:
        xs = _read_values(args.input_file, float)
    elif args.uniform is not None:
        xs = rng.substream(9).generator.random(args.uniform).tolist()
    else:
        raise ParameterError("pass --input-file or --uniform N")
    n_bits = args.bits if args.bits is not None else max(1, math.ceil(math.log2(len(xs))))
    run = run_real_sum(xs, args.eps, args.rho, n_bits, rng, fidelity=args.fidelity)
    for inst in run.instances:
        _require_feasible(inst)
    true_sum = float(sum(xs))
    report = {
        "subcommand": "run realsum",
        "seed": seed,
        "fidelity": run.fidelity,
        "n": len(xs),
        "n_bits": n_bits,
        "epsilon": args.eps,
        "slack": args.rho,
        "bit_budgets": [float(b) for b in split_budget(args.eps, n_bits)],
        "budget_total": float(math.fsum(split_budget(args.eps, n_bits))),
        "instances": [inst.to_dict() for inst in run.instances],
        "bit_counts": list(run.bit_counts),
        "estimate": run.estimate,
        "true_sum": true_sum,
        "error": run.estimate - true_sum,
        "total_messages": run.total_messages,
    }
    rows = [
        {"bit": j, "budget": float(b), "count": c}
        for j, (b, c) in enumerate(zip(report["bit_budgets"], run.bit_counts))
    ]
    _emit(args, report, rows)
    return EXIT_PASS


def _cmd_run_histogram(args) -> int:
    seed = _seed(args)
    rng = RandomSource(seed)
    if args.input_file:
        xs = _read_values(args.input_file, int)
    elif args.uniform is not None:
        xs = (rng.substream(9).generator.integers(0, args.buckets, size=args.uniform)).tolist()
    else:
        raise ParameterError("pass --input-file or --uniform N")
    run = run_histogram(xs, args.buckets, args.eps, args.rho, rng, fidelity=args.fidelity)
    _require_feasible(run.instance)
    true_counts = np.bincount(np.asarray(xs), minlength=args.buckets)[: args.buckets]
    errors = np.asarray(run.estimates) - true_counts
    report = {
        "subcommand": "run histogram",
        "seed": seed,
        "fidelity": run.fidelity,
        "n": len(xs),
        "buckets": args.buckets,
        "epsilon": args.eps,
        "slack": args.rho,
        "instance": run.instance.to_dict(),
        "estimates": list(run.estimates),
        "true_counts": [int(c) for c in true_counts],
        "linf_error": int(np.abs(errors).max()),
        "total_messages": run.total_messages,
    }
    rows = [
        {"bucket": b, "estimate": e, "true": int(t)}
        for b, (e, t) in enumerate(zip(run.estimates, true_counts))
    ]
    _emit(args, report, rows)
    return EXIT_PASS


def _cmd_audit_lemmas(args) -> int:
    params = _explicit_params(args, args.n)
    geo = check_geo_ratio(params.noise_epsilon, args.i_max)
    poi = check_poi_ratio(params)
    passed = geo.ok and poi.ok
    report = {
        "subcommand": "audit lemmas",
        "params": params.to_dict(),
        "geo_ratio": {
            "ok": geo.ok,
            "worst_margin": geo.worst_margin,
            "worst_index": geo.worst_index,
            "i_max": geo.i_max,
        },
        "flood_ratio": {
            "ok": poi.ok,
            "worst_margin": poi.worst_margin,
            "worst_index": poi.worst_index,
            "i_max": poi.i_max,
        },
        "pass": passed,
    }
    _emit(args, report)
    return EXIT_PASS if passed else EXIT_FAIL


def _cmd_audit_divergence(args) -> int:
    params = _explicit_params(args, args.n)
    report_obj = divergence_audit(
        args.n,
        params,
        coverage=args.coverage,
        tolerance=args.tolerance,
        mass_floor=args.floor,
        grid_cap=args.grid_cap,
    )
    report = {
        "subcommand": "audit divergence",
        "params": params.to_dict(),
        **report_obj.to_json_dict(),
    }
    _emit(args, report)
    return EXIT_PASS if report_obj.passed else EXIT_FAIL


def _cmd_audit_mse(args) -> int:
    seed = _seed(args)
    params = _explicit_params(args, args.n)
    _require_feasible(params)
    ones = args.ones if args.ones is not None else args.n
    ds = DatasetSummary(zeros=args.n - ones, ones=ones)
    result = measure_mse(
        params,
        ds,
        args.trials,
        RandomSource(seed),
        fidelity=args.fidelity,
        threads=args.threads,
    )
    within = abs(result.empirical_mse - result.exact) <= 3.0 * result.std_err
    below = result.empirical_mse <= result.bound + 3.0 * result.std_err
    passed = within and below
    report = {
        "subcommand": "audit mse",
        "seed": seed,
        "params": params.to_dict(),
        "dataset": {"zeros": ds.zeros, "ones": ds.ones},
        "trials": result.trials,
        "fidelity": result.fidelity,
        "empirical_mse": result.empirical_mse,
        "std_err": result.std_err,
        "exact": result.exact,
        "bound": result.bound,
        "within_3se_of_exact": within,
        "at_most_bound": below,
        "pass": passed,
    }
    _emit(args, report)
    return EXIT_PASS if passed else EXIT_FAIL


def _cmd_audit_comm(args) -> int:
    seed = _seed(args)
    params = _explicit_params(args, args.n)
    _require_feasible(params)
    result = measure_comm(params, args.x, args.trials, RandomSource(seed))
    within = abs(result.empirical_mean - result.exact) <= 3.0 * result.std_err
    below = result.empirical_mean <= result.bound + 3.0 * result.std_err
    passed = within and below
    report = {
        "subcommand": "audit comm",
        "seed": seed,
        "params": params.to_dict(),
        "x": args.x,
        "trials": result.trials,
        "empirical_mean_messages": result.empirical_mean,
        "std_err": result.std_err,
        "exact": result.exact,
        "bound": result.bound,
        "within_3se_of_exact": within,
        "at_most_bound": below,
        "pass": passed,
    }
    _emit(args, report)
    return EXIT_PASS if passed else EXIT_FAIL


def _cmd_bench(args) -> int:
    seed = _seed(args)
    rows = []
    for n in args.n_list:
        params = derive_params(args.eps, args.rho, n)
        rng = RandomSource(seed).substream(n)
        start = time.perf_counter()
        estimates = estimate_trials(0, n, params, args.trials, rng, fidelity="law")
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        sq_err = (estimates.astype(np.float64) - n) ** 2
        row = {
            "n": n,
            "pad_count": params.pad_count,
            "flood_mean": params.flood_mean,
            "drop_prob": params.drop_prob,
            "expected_messages_per_user_x1": exact_mean_messages(params, 1),
            "law_mse": float(sq_err.mean()),
            "law_mse_exact": exact_mse(params, n),
            "law_mse_bound": mse_bound(params),
        }
        if args.timing:
            row["wall_ms"] = elapsed_ms
        rows.append(row)
    report = {
        "subcommand": "bench",
        "seed": seed,
        "epsilon": args.eps,
        "slack": args.rho,
        "trials": args.trials,
        "rows": rows,
    }
    _emit(args, report, rows)
    return EXIT_PASS


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"master seed (or ${SEED_ENV_VAR})")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None, help="write the report to a file")


def _add_explicit_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--eps-prime", dest="eps_prime", type=float, default=0.5)
    p.add_argument("--q", type=float, default=0.01)
    p.add_argument("--s", type=int, default=None, help="pad count (default: cheapest feasible)")
    p.add_argument("--lam", type=float, default=None, help="flood mean (default: cheapest feasible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shufflecount",
        description="Private counting in the shuffle model: runs, audits, benchmarks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="derive or check protocol parameters")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--rho", type=float, default=0.5, help="accuracy slack in (0, 0.5]")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps-prime", dest="eps_prime", type=float, default=None)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--lam", type=float, default=None)
    _add_common(p)
    p.set_defaults(handler=_cmd_params)

    run = sub.add_parser("run", help="execute a protocol")
    run_sub = run.add_subparsers(dest="mode", required=True)

    rc = run_sub.add_parser("count", help="binary counting")
    rc.add_argument("--eps", type=float, default=1.0)
    rc.add_argument("--rho", type=float, default=0.5)
    rc.add_argument("--ones", type=int, default=None)
    rc.add_argument("--zeros", type=int, default=None)
    rc.add_argument("--input-file", default=None)
    _add_common(rc)
    rc.set_defaults(handler=_cmd_run_count)

    rr = run_sub.add_parser("realsum", help="summation of reals in [0, 1]")
    rr.add_argument("--eps", type=float, default=1.0)
    rr.add_argument("--rho", type=float, default=0.5)
    rr.add_argument("--bits", type=int, default=None)
    rr.add_argument("--input-file", default=None)
    rr.add_argument("--uniform", type=int, default=None, help="generate N seeded uniform inputs")
    rr.add_argument("--fidelity", choices=("message", "counts", "law"), default="message")
    _add_common(rr)
    rr.set_defaults(handler=_cmd_run_realsum)

    rh = run_sub.add_parser("histogram", help="per-bucket counting")
    rh.add_argument("--eps", type=float, default=1.0)
    rh.add_argument("--rho", type=float, default=0.5)
    rh.add_argument("--buckets", type=int, required=True)
    rh.add_argument("--input-file", default=None)
    rh.add_argument("--uniform", type=int, default=None, help="generate N seeded uniform inputs")
    rh.add_argument("--fidelity", choices=("message", "counts", "law"), default="message")
    _add_common(rh)
    rh.set_defaults(handler=_cmd_run_histogram)

    audit = sub.add_parser("audit", help="numerical verification")
    audit_sub = audit.add_subparsers(dest="mode", required=True)

    al = audit_sub.add_parser("lemmas", help="noise-ratio inequality checks")
    _add_explicit_params(al)
    al.add_argument("--n", type=int, default=3)
    al.add_argument("--i-max", dest="i_max", type=int, default=10_000)
    _add_common(al)
    al.set_defaults(handler=_cmd_audit_lemmas)

    ad = audit_sub.add_parser("divergence", help="exact view max-divergence audit")
    _add_explicit_params(ad)
    ad.add_argument("--n", type=int, default=3)
    ad.add_argument("--coverage", type=float, default=1.0 - 1e-9)
    ad.add_argument("--tolerance", type=float, default=1e-6)
    ad.add_argument("--floor", type=float, default=1e-30)
    ad.add_argument("--grid-cap", dest="grid_cap", type=int, default=4096)
    _add_common(ad)
    ad.set_defaults(handler=_cmd_audit_divergence)

    am = audit_sub.add_parser("mse", help="Monte Carlo MSE vs closed form")
    _add_explicit_params(am)
    am.add_argument("--n", type=int, required=True)
    am.add_argument("--ones", type=int, default=None, help="ones count (default: all ones)")
    am.add_argument("--trials", type=int, default=50_000)
    am.add_argument("--fidelity", choices=("message", "counts", "law"), default="message")
    am.add_argument("--threads", type=int, default=1)
    _add_common(am)
    am.set_defaults(handler=_cmd_audit_mse)

    ac = audit_sub.add_parser("comm", help="Monte Carlo per-user messages vs closed form")
    _add_explicit_params(ac)
    ac.add_argument("--n", type=int, required=True)
    ac.add_argument("--x", type=int, choices=(0, 1), default=1)
    ac.add_argument("--trials", type=int, default=10_000)
    _add_common(ac)
    ac.set_defaults(handler=_cmd_audit_comm)

    b = sub.add_parser("bench", help="parameter/error/communication sweep over user counts")
    b.add_argument("--eps", type=float, default=1.0)
    b.add_argument("--rho", type=float, default=0.5)
    b.add_argument("--n-list", dest="n_list", type=_int_list, default=[100, 1000, 10_000])
    b.add_argument("--trials", type=int, default=10_000)
    b.add_argument(
        "--timing",
        action="store_true",
        help="include wall-clock timings (report is then not byte-reproducible)",
    )
    _add_common(b)
    b.set_defaults(handler=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        return args.handler(args)
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AuditInconclusiveError as exc:
        print(f"audit inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
