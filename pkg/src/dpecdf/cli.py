"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from .aggregation import evaluate_curve_pointwise, make_backend, parse_backend_spec
from .apps.hl import hl_statistic_dp
from .apps.roc import dp_roc, smooth_roc
from .budget import BudgetAccount
from .data import gen_poisson_dataset, ingest_csv
from .errors import ConfigError, ConvergenceError, DataError
from .experiments import EXPERIMENTS, RunConfig, manifest, run_experiment
from .grid import EvaluationGrid, make_geometric_grid, make_uniform_grid
from .noise import ContinualReleaseState, TreeNoiseRegistry, derive_seed, dp_ecdf
from .query import inverse_ecdf
from .smoothing import smooth

log = logging.getLogger("dpecdf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


# -- output ---------------------------------------------------------------------------


def _emit(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    with open(out, "w", newline="") as fh:
        fh.write(text)


def _table(header: List[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _dump_noise(args, registries) -> None:
    if not args.unsafe_dump_noise:
        return
    if args.out in (None, "-"):
        raise ConfigError("--unsafe-dump-noise needs --out so the noise goes to a separate file")
    log.warning("writing secret noise values next to the output; never do this in a deployment")
    snap = [r.snapshot() for r in registries]
    with open(args.out + ".noise.json", "w") as fh:
        fh.write(_json(snap if len(snap) > 1 else snap[0]))


# -- shared argument handling ---------------------------------------------------------------


def _grid_from_args(args) -> EvaluationGrid:
    if args.grid_file:
        with open(args.grid_file) as fh:
            return EvaluationGrid.from_json(fh.read())
    if args.lo is None or args.hi is None or args.step is None:
        raise ConfigError("give --lo, --hi and --step (or --grid-file)")
    if args.geometric:
        return make_geometric_grid(args.lo, args.hi, args.step)
    return make_uniform_grid(args.lo, args.hi, args.step)


def _scores(args):
    data, summary = ingest_csv(args.input, args.score_column, getattr(args, "label_column", None), strict=not args.lenient)
    print(summary.format(), file=sys.stderr)
    return data


def _private_curve(args, grid, scores, budget):
    registry = TreeNoiseRegistry.for_ecdf(args.seed, grid.tree_depth, args.epsilon)
    kind, _ = parse_backend_spec(args.backend)
    if kind == "plaintext":
        curve = dp_ecdf(scores, grid, args.epsilon, registry, budget)
    else:
        backend = make_backend(args.backend, list(scores), registry, grid=grid, seed=derive_seed(args.seed, 0x4B45))
        curve = evaluate_curve_pointwise(backend, grid, None, args.epsilon, budget)
        print(f"cost: {backend.cost_meter().to_json()}", file=sys.stderr)
    return curve, registry


# -- subcommands ------------------------------------------------------------------------------


def cmd_ecdf(args) -> int:
    grid = _grid_from_args(args)
    data = _scores(args)
    budget = BudgetAccount()
    curve, reg = _private_curve(args, grid, data.scores, budget)
    if args.format == "json":
        text = _json({"tau": list(grid.points), "values": curve.values.tolist(), "n": curve.n, "ledger": budget.to_list()})
    else:
        text = _table(["tau", "value"], zip(curve.thresholds(), curve.values))
    _emit(text, args.out)
    _dump_noise(args, [reg])
    return EXIT_OK


def _parse_index_set(spec: Optional[str], grid: EvaluationGrid):
    if not spec:
        return None
    return sorted({int(tok) for tok in spec.split(",") if tok.strip()})


def cmd_smooth(args) -> int:
    grid = _grid_from_args(args)
    data = _scores(args)
    budget = BudgetAccount()
    curve, reg = _private_curve(args, grid, data.scores, budget)
    sm = smooth(curve, _parse_index_set(args.indices, grid), p=args.p)
    if args.format == "json":
        obj = sm.to_dict()
        obj.update(tau=sm.thresholds().tolist(), ledger=budget.to_list())
        text = _json(obj)
    else:
        text = sm.to_csv()
    _emit(text, args.out)
    _dump_noise(args, [reg])
    return EXIT_OK


def cmd_invcdf(args) -> int:
    grid = _grid_from_args(args)
    data = _scores(args)
    budget = BudgetAccount()
    curve, reg = _private_curve(args, grid, data.scores, budget)
    if not args.raw:
        curve = smooth(curve, p=args.p)
    psi = args.psi if args.psi is not None else (grid.hi - grid.lo) / (4 * grid.n_points)
    probs = [float(t) for t in args.probs.split(",")]
    rows = [(q, inverse_ecdf(curve, q, psi)) for q in probs]
    if args.format == "json":
        text = _json({"p": probs, "value": [v for _, v in rows], "psi": psi, "ledger": budget.to_list()})
    else:
        text = _table(["p", "value"], rows)
    _emit(text, args.out)
    _dump_noise(args, [reg])
    return EXIT_OK


def cmd_roc(args) -> int:
    grid = _grid_from_args(args)
    data = _scores(args)
    budget = BudgetAccount()
    curve = dp_roc(data, grid, args.epsilon, seed=args.seed, budget=budget)
    if not args.raw:
        curve = smooth_roc(curve, p=args.p)
    if args.format == "json":
        obj = curve.to_dict()
        obj["ledger"] = budget.to_list()
        text = _json(obj)
    else:
        text = curve.to_csv()
    _emit(text, args.out)
    return EXIT_OK


def cmd_hl(args) -> int:
    data = _scores(args)
    budget = BudgetAccount()
    res = hl_statistic_dp(
        data, args.Q, args.epsilon, args.L, seed=args.seed, backend=args.backend, budget=budget, floor=args.floor
    )
    _emit(_json(res.to_dict()) if args.format == "json" else res.to_csv(), args.out)
    return EXIT_OK


def cmd_continual(args) -> int:
    data = _scores(args)
    stream = data.scores
    horizon = args.horizon or len(stream)
    budget = BudgetAccount()
    if args.gaussian_z is not None:
        state = ContinualReleaseState(horizon, args.seed, z=args.gaussian_z, budget=budget)
    else:
        state = ContinualReleaseState(horizon, args.seed, epsilon=args.epsilon, budget=budget)
    rows = [(t + 1, state.release(x)) for t, x in enumerate(stream)]
    if args.format == "json":
        text = _json({"t": [t for t, _ in rows], "value": [v for _, v in rows], "privacy": state.privacy_label()})
    else:
        text = _table(["t", "value"], rows)
    _emit(text, args.out)
    _dump_noise(args, [state.registry])
    return EXIT_OK


def cmd_fss_demo(args) -> int:
    rng = np.random.default_rng([args.seed, 0x44454D4F])
    grid = make_uniform_grid(0.0, float((1 << args.L) - 1), 1.0)
    values = rng.integers(0, grid.n_points, size=args.n).astype(float)
    registry = TreeNoiseRegistry.for_ecdf(args.seed, grid.tree_depth, args.epsilon)
    B = sorted(rng.choice(np.arange(1, grid.n_points + 1), size=min(args.queries, grid.n_points), replace=False).tolist())
    out = {}
    for spec in ("plaintext", "fss:m=2"):
        backend = make_backend(spec, list(values), registry, grid=grid, seed=derive_seed(args.seed, 0x4B45))
        curve = evaluate_curve_pointwise(backend, grid, B, args.epsilon)
        out[spec] = {"values": curve.values.tolist(), "cost": backend.cost_meter().to_dict()}
    out["identical"] = out["plaintext"]["values"] == out["fss:m=2"]["values"]
    out["B"] = B
    out["n"] = args.n
    if args.format == "json":
        text = _json(out)
    else:
        rows = []
        for spec in ("plaintext", "fss:m=2"):
            c = out[spec]["cost"]
            rows.append((spec, c["messages_sent"], c["by_role"]["party"]["messages"], c["bytes_sent"], c["rounds"]))
        text = _table(["backend", "messages", "party_messages", "bytes", "rounds"], rows)
    _emit(text, args.out)
    return EXIT_OK


def cmd_gen_poisson(args) -> int:
    values = gen_poisson_dataset(args.lam, args.N, seed=args.seed)
    if args.format == "json":
        text = _json({"lam": args.lam, "N": args.N, "values": values.astype(int).tolist()})
    else:
        text = _table(["value"], ((int(v),) for v in values))
    _emit(text, args.out)
    return EXIT_OK


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            try:
                import tomli as tomllib
            except ModuleNotFoundError:
                raise ConfigError("TOML configs need Python 3.11+ or the tomli package; use JSON") from None
        return tomllib.loads(raw.decode())
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_experiment(args) -> int:
    cfg_dict = _load_config(args.config)
    cfg_dict["seed"] = args.seed
    if args.epsilon_given:
        cfg_dict["epsilon"] = args.epsilon
    cfg_dict["backend"] = args.backend
    for key in ("reps", "depth", "lam", "Q", "workers", "n_scored", "psi"):
        v = getattr(args, key, None)
        if v is not None:
            cfg_dict[key] = v
    if args.epsilons:
        cfg_dict["epsilons"] = [float(t) for t in args.epsilons.split(",")]
    if args.depths:
        cfg_dict["depths"] = [int(t) for t in args.depths.split(",")]
    cfg = RunConfig.from_dict(cfg_dict)
    result = run_experiment(args.name, cfg)
    text = result.to_json() + "\n" if args.format == "json" else result.to_csv()
    _emit(text, args.out)
    if args.out not in (None, "-"):
        base, _ = os.path.splitext(args.out)
        with open(base + ".manifest.json", "w") as fh:
            fh.write(_json(manifest(result)))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--epsilon", type=float, default=None, help="privacy budget (default 1)")
    common.add_argument("--backend", default="plaintext", help='"plaintext", "addshare:m=<k>" or "fss:m=2"')
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--config", default=None, help="JSON (or TOML) file with experiment settings")
    common.add_argument("--unsafe-dump-noise", action="store_true", help="also write the secret noise registry")
    common.add_argument("-v", "--verbose", action="store_true")

    grid_opts = argparse.ArgumentParser(add_help=False)
    grid_opts.add_argument("--lo", type=float)
    grid_opts.add_argument("--hi", type=float)
    grid_opts.add_argument("--step", type=float, help="lattice step (additive, or log-step with --geometric)")
    grid_opts.add_argument("--geometric", action="store_true")
    grid_opts.add_argument("--grid-file", help="grid JSON {lo, hi, kind, psi, points}")

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--input", required=True, help="CSV file with a header row")
    data_opts.add_argument("--score-column", default="score")
    data_opts.add_argument("--lenient", action="store_true", help="skip malformed rows instead of failing")

    labelled = argparse.ArgumentParser(add_help=False)
    labelled.add_argument("--label-column", default="label")

    parser = argparse.ArgumentParser(prog="dpecdf", description="Differentially private ECDF tools", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ecdf", parents=[common, grid_opts, data_opts], help="publish a private ECDF")
    p.set_defaults(func=cmd_ecdf)

    p = sub.add_parser("smooth", parents=[common, grid_opts, data_opts], help="private ECDF, then monotone smoothing")
    p.add_argument("--p", type=int, choices=(1, 2), default=2)
    p.add_argument("--indices", help="comma-separated 1-based grid indices to smooth over (default: all)")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("invcdf", parents=[common, grid_opts, data_opts], help="inverse of the private ECDF")
    p.add_argument("--probs", required=True, help="comma-separated probabilities")
    p.add_argument("--psi", type=float, help="bisection precision (default range / (4N))")
    p.add_argument("--p", type=int, choices=(1, 2), default=2)
    p.add_argument("--raw", action="store_true", help="invert the unsmoothed curve")
    p.set_defaults(func=cmd_invcdf)

    p = sub.add_parser("roc", parents=[common, grid_opts, data_opts, labelled], help="private ROC curve")
    p.add_argument("--p", type=int, choices=(1, 2), default=2)
    p.add_argument("--raw", action="store_true", help="skip smoothing")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("hl", parents=[common, data_opts, labelled], help="private Hosmer-Lemeshow statistic")
    p.add_argument("--Q", type=int, default=10)
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--floor", type=float, default=0.5)
    p.set_defaults(func=cmd_hl)

    p = sub.add_parser("continual", parents=[common, data_opts], help="running sums of a [0,1] stream")
    p.add_argument("--horizon", type=int, help="stream length bound (default: number of rows)")
    p.add_argument("--gaussian-z", type=float, help="Gaussian noise multiplier instead of Laplace")
    p.set_defaults(func=cmd_continual)

    p = sub.add_parser("fss-demo", parents=[common], help="compare plaintext and FSS backends")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--queries", type=int, default=8)
    p.add_argument("--L", type=int, default=4)
    p.set_defaults(func=cmd_fss_demo)

    p = sub.add_parser("gen-poisson", parents=[common], help="synthetic Poisson-count dataset")
    p.add_argument("--lam", type=float, default=3.0)
    p.add_argument("--N", type=int, default=1 << 15)
    p.set_defaults(func=cmd_gen_poisson)

    p = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--reps", type=int)
    p.add_argument("--depth", type=int, help="log2 of the grid size")
    p.add_argument("--lam", type=float)
    p.add_argument("--Q", type=int)
    p.add_argument("--n-scored", dest="n_scored", type=int)
    p.add_argument("--psi", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--epsilons", help="comma-separated epsilon sweep")
    p.add_argument("--depths", help="comma-separated grid depths (runtime experiment)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    args.epsilon_given = args.epsilon is not None
    if args.epsilon is None:
        args.epsilon = 1.0
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ZeroDivisionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
