"""Command-line entry point: ``l0cv {gen,fit,tau-search,tune,bench}``.

Every command writes a JSON report (``--json PATH`` or ``--format json`` for
stdout) and otherwise prints an aligned text summary. Exit codes: 0 success,
2 bad configuration, 3 numerical failure, 4 budget exhausted (partial
results are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cvopt import (
    CdOptions,
    CVProblem,
    coordinate_descent,
    grid_search_tau,
    tau_max_default,
    tau_search,
)
from .data import SyntheticSpec, generate_synthetic, load_csv, make_folds, write_csv
from .errors import BudgetExhausted, ConfigurationError, L0CVError, NumericError
from .mio import MioOptions, solve_mio_gram
from .linalg import GramData

__all__ = ["main", "build_parser", "DEFAULT_GAMMAS", "SCHEMA_VERSION"]

log = logging.getLogger("l0cv")

SCHEMA_VERSION = 1
DEFAULT_GAMMAS = (0.01, 0.02, 0.05, 0.10, 0.20, 0.50, 1.00)
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 2, 3, 4
_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("CVX_L0_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if level is None:
        log.warning("ignoring unknown CVX_L0_LOG value %r", name)


# argument types -------------------------------------------------------------

def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a positive finite number: {text!r}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if v < 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a nonnegative finite number: {text!r}")
    return v


def _folds(text: str):
    if text.lower() == "loo":
        return "loo"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"folds must be an integer or 'loo', got {text!r}") from None
    if k < 2:
        raise argparse.ArgumentTypeError("folds must be at least 2")
    return k


def _budget(text: str):
    if text.lower() in ("inf", "unlimited", "none"):
        return None
    k = int(text)
    if k < 0:
        raise argparse.ArgumentTypeError("mio budget must be nonnegative")
    return k


def _gamma_list(text: str) -> list[float]:
    return [_positive_float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", dest="json_path", type=Path, help="write the JSON report here")
    common.add_argument("--format", choices=("text", "json"), default="text", help="stdout format")
    common.add_argument("--seed", type=int, default=0)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", type=Path, required=True, help="CSV file with a header row")
    data.add_argument("--response", default=None, help="response column name or index (default: last)")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--gap-tol", type=_nonneg_float, default=1e-6, help="relative MIO gap tolerance")
    solver.add_argument("--time-limit", type=_positive_float, default=None, help="seconds per MIO")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--folds", type=_folds, default=5, help="number of folds or 'loo'")
    search.add_argument("--tau-min", type=int, default=2)
    search.add_argument("--tau-max", type=int, default=None, help="default: largest t with t ln t <= min(n, p)")
    search.add_argument("--epsilon", type=_nonneg_float, default=1e-4)
    search.add_argument("--mio-budget", type=_budget, default=None)
    search.add_argument("--metric", choices=("certified", "ridge"), default="certified")
    search.add_argument("--full-mio", action=argparse.BooleanOptionalAction, default=False,
                        help="solve the full-data MIO per tau to sharpen lower bounds")
    search.add_argument("--threads", type=int, default=1)
    search.add_argument("--trace", type=Path, default=None, help="JSONL file for per-iteration bounds")

    p = argparse.ArgumentParser(prog="l0cv", description="Cross-validated tuning of sparse ridge regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--tau-true", type=int, required=True)
    g.add_argument("--rho", type=float, default=0.0)
    g.add_argument("--nu", type=_positive_float, default=1.0)
    g.add_argument("--output", type=Path, required=True)

    f = sub.add_parser("fit", parents=[common, data, solver], help="solve the training problem at fixed (gamma, tau)")
    f.add_argument("--gamma", type=_positive_float, required=True)
    f.add_argument("--tau", type=int, required=True)

    t = sub.add_parser("tau-search", parents=[common, data, solver, search], help="best tau at fixed gamma")
    t.add_argument("--gamma", type=_positive_float, required=True)
    t.add_argument("--mode", choices=("exact", "relaxation"), default="exact")

    u = sub.add_parser("tune", parents=[common, data, solver, search], help="coordinate descent over (gamma, tau)")
    u.add_argument("--gamma0", type=_positive_float, default=None, help="default 1/sqrt(n)")
    u.add_argument("--tau0", type=int, default=None, help="default tau-min")
    u.add_argument("--mode", choices=("exact", "relaxation"), default="relaxation")
    u.add_argument("--max-iter", type=int, default=20)

    b = sub.add_parser("bench", parents=[common, solver, search], help="Grid vs bound-driven search")
    b.add_argument("--data", type=Path, nargs="+", required=True)
    b.add_argument("--response", default=None)
    b.add_argument("--gammas", type=_gamma_list, default=list(DEFAULT_GAMMAS))
    b.set_defaults(epsilon=0.0, full_mio=True)
    return p


# helpers ---------------------------------------------------------------------

def _problem(args, path=None) -> CVProblem:
    ds = load_csv(path or args.data, args.response)
    k = ds.n if args.folds == "loo" else args.folds
    if k > ds.n:
        raise ConfigurationError(f"{k} folds requested but the dataset has only {ds.n} rows")
    return CVProblem(ds, make_folds(ds.n, k, args.seed))


def _taus(args, P: CVProblem) -> tuple[int, int]:
    hi = args.tau_max if args.tau_max is not None else min(tau_max_default(P.n, P.p), P.p)
    lo = args.tau_min
    if lo < 1 or hi > P.p or lo > hi:
        raise ConfigurationError(f"invalid tau range [{lo}, {hi}] for p={P.p}")
    return lo, hi


def _mio_opts(args) -> MioOptions:
    return MioOptions(gap_tol=args.gap_tol, time_limit=args.time_limit)


def _header(command: str) -> dict:
    return {"schema": f"l0cv/{command}", "schema_version": SCHEMA_VERSION, "version": __version__}


def _dataset_info(P: CVProblem, path) -> dict:
    return {"path": str(path), "n": P.n, "p": P.p, "k": P.k, "constant_columns": list(P.dataset.constant_columns)}


def _search_report(res) -> dict:
    rows = []
    for t in res.table.taus:
        cells = res.table.row(t)
        rows.append({
            "tau": t,
            "h": res.h[t],
            "lower": res.table.lower_sum(t) / res.n,
            "upper": res.table.upper_sum(t) / res.n,
            "exact_cells": sum(c.exact for c in cells),
        })
    return {
        "gamma": res.gamma,
        "tau_star": res.tau_star,
        "h_star": res.h_star,
        "h_label": "exact" if res.all_exact() else "estimate",
        "LB": res.LB,
        "UB": res.UB,
        "status": res.status,
        "rows": rows,
        "stats": {k: v for k, v in res.stats.as_dict().items() if k != "wall_time"},
        "timing": {"wall_time": res.stats.wall_time},
    }


class _Trace:
    def __init__(self, path):
        self.fh = open(path, "w") if path else None

    def __call__(self, event: dict) -> None:
        if self.fh:
            self.fh.write(json.dumps(event, sort_keys=True) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


# commands --------------------------------------------------------------------

def cmd_gen(args) -> tuple[dict, str, int]:
    spec = SyntheticSpec(n=args.n, p=args.p, tau_true=args.tau_true, rho=args.rho, nu=args.nu, seed=args.seed)
    ds = generate_synthetic(spec)
    out = write_csv(ds, args.output)
    rep = {**_header("gen"), "output": str(out), "sidecar": str(out) + ".json", "n": ds.n, "p": ds.p,
           "beta_true": ds.meta["beta_true"]}
    text = f"wrote {out} ({ds.n} x {ds.p}, tau_true={args.tau_true}) and its sidecar"
    return rep, text, EXIT_OK


def cmd_fit(args) -> tuple[dict, str, int]:
    ds = load_csv(args.data, args.response)
    if not 1 <= args.tau <= ds.p:
        raise ConfigurationError(f"tau must lie in [1, {ds.p}], got {args.tau}")
    t0 = time.perf_counter()
    sol = solve_mio_gram(GramData.from_xy(ds.X, ds.y), args.gamma, args.tau, _mio_opts(args))
    elapsed = time.perf_counter() - t0
    raw, intercept = ds.unscale_coefficients(sol.beta)
    names = list(ds.feature_names or [f"x{i}" for i in range(ds.p)])
    rep = {
        **_header("fit"),
        "dataset": {"path": str(args.data), "n": ds.n, "p": ds.p},
        "gamma": args.gamma,
        "tau": args.tau,
        "beta": sol.beta.tolist(),
        "beta_raw": raw.tolist(),
        "intercept": intercept,
        "support": [int(i) for i in sol.support],
        "support_names": [names[i] for i in sol.support],
        "objective": sol.upper,
        "lower_bound": sol.lower,
        "gap": sol.gap,
        "status": sol.status,
        "nodes": sol.nodes,
        "timing": {"wall_time": elapsed},
    }
    lines = [f"status {sol.status}  objective {sol.upper:.6g}  gap {sol.gap:.2e}  nodes {sol.nodes}",
             f"{'feature':<16}{'beta':>14}{'beta_raw':>14}"]
    for i in sol.support:
        lines.append(f"{names[i]:<16}{sol.beta[i]:>14.6g}{raw[i]:>14.6g}")
    code = EXIT_OK if sol.status == "optimal" else EXIT_BUDGET
    return rep, "\n".join(lines), code


def _search_text(res) -> str:
    lines = [f"gamma {res.gamma:g}  tau* {res.tau_star}  LB {res.LB:.6g}  UB {res.UB:.6g}  status {res.status}",
             f"{'tau':>4}{'h':>14}{'lower':>14}{'upper':>14}{'exact':>8}"]
    for t in res.table.taus:
        lines.append(f"{t:>4}{res.h[t]:>14.6g}{res.table.lower_sum(t) / res.n:>14.6g}"
                     f"{res.table.upper_sum(t) / res.n:>14.6g}{sum(c.exact for c in res.table.row(t)):>8}")
    s = res.stats
    lines.append(f"MIOs {s.mio_count}  nodes {s.node_count}  relaxations {s.relax_count}  time {s.wall_time:.2f}s")
    return "\n".join(lines)


def cmd_tau_search(args) -> tuple[dict, str, int]:
    P = _problem(args)
    trace = _Trace(args.trace)
    try:
        res = tau_search(P, None, args.gamma, _taus(args, P), epsilon=args.epsilon, mio_budget=args.mio_budget,
                         mode=args.mode, mio=_mio_opts(args), metric=args.metric, full_mio=args.full_mio,
                         threads=args.threads, on_iteration=trace)
    finally:
        trace.close()
    rep = {**_header("tau-search"), "dataset": _dataset_info(P, args.data), **_search_report(res)}
    code = EXIT_BUDGET if res.status == "budget" else EXIT_OK
    return rep, _search_text(res), code


def cmd_tune(args) -> tuple[dict, str, int]:
    P = _problem(args)
    lo, hi = _taus(args, P)
    gamma0 = args.gamma0 if args.gamma0 is not None else 1.0 / math.sqrt(P.n)
    tau0 = args.tau0 if args.tau0 is not None else lo
    opts = CdOptions(tau_range=(lo, hi), mode=args.mode, epsilon=args.epsilon, mio_budget=args.mio_budget,
                     max_iter=args.max_iter, mio=_mio_opts(args), metric=args.metric, threads=args.threads)
    trace = _Trace(args.trace)
    try:
        st = coordinate_descent(P, None, gamma0, tau0, opts, on_iteration=trace)
    finally:
        trace.close()
    stats = st.stats
    h_final, label = st.h_t, "estimate"
    if args.mode == "exact":
        g = grid_search_tau(P, None, st.gamma_t, [st.tau_t], exact=True, mio=_mio_opts(args))
        stats.add(g.stats)
        h_final, label = g.h[st.tau_t], "exact"
    t0 = time.perf_counter()
    final = solve_mio_gram(P.full, st.gamma_t, st.tau_t, _mio_opts(args))
    stats.mio_count += 1
    stats.node_count += final.nodes
    stats.wall_time += time.perf_counter() - t0
    raw, intercept = P.dataset.unscale_coefficients(final.beta)
    rep = {
        **_header("tune"),
        "dataset": _dataset_info(P, args.data),
        "gamma": st.gamma_t,
        "tau": st.tau_t,
        "h": h_final,
        "h_label": label,
        "status": st.status,
        "history": st.history,
        "model": {"beta": final.beta.tolist(), "beta_raw": raw.tolist(), "intercept": intercept,
                  "support": [int(i) for i in final.support], "objective": final.upper, "gap": final.gap,
                  "status": final.status},
        "stats": {k: v for k, v in stats.as_dict().items() if k != "wall_time"},
        "timing": {"wall_time": stats.wall_time},
    }
    lines = [f"gamma {st.gamma_t:.6g}  tau {st.tau_t}  h {h_final:.6g} ({label})  status {st.status}",
             f"{'iter':>4} {'step':<6}{'gamma':>12}{'tau':>5}{'h':>14}"]
    for e in st.history:
        lines.append(f"{e['iter']:>4} {e['step']:<6}{e['gamma']:>12.6g}{e['tau']:>5}{e['h']:>14.6g}")
    lines.append(f"support {[int(i) for i in final.support]}  MIOs {stats.mio_count}  nodes {stats.node_count}")
    return rep, "\n".join(lines), EXIT_OK


def _reduction(grid: float, alg: float) -> float:
    """Percentage reduction ``100 (grid - alg) / grid``."""
    return 100.0 * (grid - alg) / grid if grid > 0 else 0.0


def _bench_row(args, P: CVProblem, path, gamma: float, taus) -> dict:
    row = {"dataset": str(path), "gamma": gamma}
    try:
        mio = _mio_opts(args)
        g = grid_search_tau(P, None, gamma, taus, exact=True, mio=mio)
        a = tau_search(P, None, gamma, taus, epsilon=args.epsilon, mio_budget=args.mio_budget, mode="exact",
                       mio=mio, metric=args.metric, full_mio=args.full_mio)
    except L0CVError as exc:
        row["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return row
    row["grid"] = {"time": g.stats.wall_time, "mio_count": g.stats.mio_count, "node_count": g.stats.node_count,
                   "tau_star": g.tau_star}
    row["alg"] = {"time": a.stats.wall_time, "mio_count": a.stats.mio_count, "node_count": a.stats.node_count,
                  "tau_star": a.tau_star, "status": a.status}
    row["reduction"] = {
        "time": _reduction(g.stats.wall_time, a.stats.wall_time),
        "mio": _reduction(g.stats.mio_count, a.stats.mio_count),
        "nodes": _reduction(g.stats.node_count, a.stats.node_count),
    }
    return row


def _pct(v: float) -> str:
    # whole percent, truncated toward zero (3978 -> 1714 shows as 56%)
    return f"{int(v)}%"


def _bench_text(rows) -> str:
    head = (f"{'dataset':<24}{'gamma':>7} | {'time':>8}{'MIO':>7}{'nodes':>9} | {'time':>8}{'MIO':>7}{'nodes':>9}"
            f" | {'time%':>7}{'MIO%':>7}{'nodes%':>8}")
    lines = [f"{'':<31} | {'Grid':^24} | {'Alg. 1':^24} | {'Reduction':^22}", head, "-" * len(head)]
    for r in rows:
        name = Path(r["dataset"]).name[:23]
        if "error" in r:
            lines.append(f"{name:<24}{r['gamma']:>7.2f} | error: {r['error']['message']}")
            continue
        g, a, d = r["grid"], r["alg"], r["reduction"]
        lines.append(
            f"{name:<24}{r['gamma']:>7.2f} | {g['time']:>8.2f}{g['mio_count']:>7}{g['node_count']:>9}"
            f" | {a['time']:>8.2f}{a['mio_count']:>7}{a['node_count']:>9}"
            f" | {_pct(d['time']):>7}{_pct(d['mio']):>7}{_pct(d['nodes']):>8}"
        )
    return "\n".join(lines)


def cmd_bench(args) -> tuple[dict, str, int]:
    if not args.gammas:
        raise ConfigurationError("gamma list is empty")
    jobs = []
    for path in args.data:
        P = _problem(args, path)
        taus = _taus(args, P)
        jobs += [(P, path, g, taus) for g in args.gammas]
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(lambda j: _bench_row(args, *j), jobs))
    else:
        rows = [_bench_row(args, *j) for j in jobs]
    rep = {**_header("bench"), "epsilon": args.epsilon, "full_mio": args.full_mio, "rows": rows}
    failed = [r for r in rows if "error" in r]
    code = EXIT_OK
    if failed:
        kinds = {r["error"]["type"] for r in failed}
        code = EXIT_CONFIG if any("Configuration" in k or "Parse" in k for k in kinds) else EXIT_NUMERIC
    elif any(r["alg"]["status"] == "budget" for r in rows):
        code = EXIT_BUDGET
    return rep, _bench_text(rows), code


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "tau-search": cmd_tau_search, "tune": cmd_tune, "bench": cmd_bench}


def _emit(args, rep: dict) -> None:
    text = json.dumps(rep, indent=2, sort_keys=True, default=_json_default)
    if args.json_path:
        Path(args.json_path).write_text(text + "\n")
    if args.format == "json":
        print(text)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        rep, text, code = COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"l0cv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"l0cv: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BudgetExhausted as exc:
        print(f"l0cv: budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as exc:
        print(f"l0cv: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(args, rep)
    if args.format == "text":
        print(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
