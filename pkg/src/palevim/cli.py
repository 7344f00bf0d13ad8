"""Command-line interface: ``palevim compute | simulate | oracle``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .ale import ale_second_surface, ale_second_vim, default_K, default_K_pair, r2_ale2
from .baselines import BaselineConfig, OracleVims, local_shapley, marginal_permutation_vim, oracle_linear3
from .core import Dataset
from .models import (BUILTIN_NAMES, SCENARIOS, ModelError, ScenarioSpec, SchemaError, generate_scenario,
                     load_dataset, make_builtin, spawn_subprocess_model, write_dataset)
from .pale import analyze_predictor

METHODS = ("ale_main", "ale_second", "qpale", "cpale", "mp", "shm")
DEFAULT_METHODS = "ale_main,qpale,cpale"
EXIT_ARGS = 2
EXIT_MODEL = 3


class ArgumentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers

def parse_floats(text: str, what: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ArgumentError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def parse_scenario(text: str, n: int, seed: int, sigma: Optional[float], beta=None) -> ScenarioSpec:
    """``name[:key=value,...]`` with keys rho and d."""
    name, _, rest = text.partition(":")
    if name not in SCENARIOS:
        raise ArgumentError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq or key not in ("rho", "d"):
            raise ArgumentError(f"bad scenario parameter {item!r}; use rho=<r> or d=<int>")
        try:
            kwargs[key] = int(value) if key == "d" else float(value)
        except ValueError:
            raise ArgumentError(f"bad value in scenario parameter {item!r}") from None
    if beta is not None:
        kwargs["beta"] = tuple(beta)
    try:
        return ScenarioSpec(name, n, seed=seed, sigma=sigma, **kwargs)
    except ValueError as exc:
        raise ArgumentError(str(exc)) from None


def resolve_model(text: str, data: Dataset):
    kind, _, rest = text.partition(":")
    if kind == "builtin":
        name, _, params = rest.partition(":")
        if name not in BUILTIN_NAMES:
            raise ArgumentError(f"unknown builtin model {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
        try:
            return make_builtin(name, parse_floats(params, "--model parameters"), names=data.names)
        except ValueError as exc:
            raise ArgumentError(str(exc)) from None
    if kind == "cmd":
        if not rest.strip():
            raise ArgumentError("--model cmd: needs a command")
        levels = {j: c.levels for j, c in enumerate(data.columns) if c.is_categorical}
        return spawn_subprocess_model(rest, data.names, data.kinds, levels)
    raise ArgumentError(f"--model must start with builtin: or cmd:, got {text!r}")


def parse_methods(text: str) -> list:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ArgumentError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    if not methods:
        raise ArgumentError("--vims is empty")
    return list(dict.fromkeys(methods))


def thread_count() -> int:
    raw = os.environ.get("PALEVIM_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ArgumentError(f"PALEVIM_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ArgumentError(f"PALEVIM_THREADS must be a positive integer, got {raw!r}")
    return value


# ---------------------------------------------------------------------------
# report

def vim_entry(value: Optional[float], reason: Optional[str] = None) -> dict:
    if value is None:
        return {"value": None, "sqrt": None, "reason": reason}
    value = max(float(value), 0.0)
    return {"value": value, "sqrt": math.sqrt(value)}


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False) + "\n"


def strip_timing(report: dict) -> dict:
    out = json.loads(json.dumps(report))
    out["meta"].pop("wall_time_s", None)
    return out


def load_inputs(args) -> Dataset:
    if (args.data is None) == (args.scenario is None):
        raise ArgumentError("give exactly one of --data or --scenario")
    if args.data is not None:
        if args.sigma is not None:
            raise ArgumentError("--sigma applies to --scenario only")
        cats = [c for c in (args.categorical or "").split(",") if c]
        return load_dataset(args.data, args.response, cats)
    if args.response is not None:
        raise ArgumentError("--response applies to --data only; use --sigma to add a response to a scenario")
    if args.categorical:
        raise ArgumentError("--categorical applies to --data only")
    beta = parse_floats(args.beta, "--beta") if args.beta else None
    return generate_scenario(parse_scenario(args.scenario, args.n, args.seed, args.sigma, beta))


def compute_report(args) -> tuple:
    methods = parse_methods(args.vims)
    data = load_inputs(args)
    if "mp" in methods and data.response is None:
        raise ArgumentError("--vims mp requires a response: pass --response <column> with --data "
                            "or --sigma with --scenario")
    for flag in ("K", "L", "K_pair", "N", "M"):
        value = getattr(args, flag)
        if value is not None and value < 1:
            raise ArgumentError(f"--{flag.replace('_', '-')} must be a positive integer")
    model = resolve_model(args.model, data)
    model.check_schema(data)
    threads = thread_count()
    n, d = data.n, data.d
    K = args.K if args.K is not None else default_K(n)
    if K > n:
        raise ArgumentError(f"--K {K} exceeds n={n}")
    K_pair = args.K_pair if args.K_pair is not None else default_K_pair(K)
    cfg = BaselineConfig(N=args.N or 50, M=args.M or 100, seed=args.seed)
    all_numeric = all(not c.is_categorical for c in data.columns)
    start = time.perf_counter()

    want_paths = any(m in methods for m in ("ale_main", "qpale", "cpale", "ale_second")) or args.r2
    need_second = "ale_second" in methods or args.r2
    counts = {}

    def per_predictor(j):
        handle = model.fork()
        a = analyze_predictor(handle, data, j, K=K, L=args.L, midpoint=args.midpoint,
                              quantile="qpale" in methods or bool(args.plots),
                              connected="cpale" in methods or bool(args.plots))
        return a, handle.eval_counter

    with ThreadPoolExecutor(max_workers=threads) as pool:
        analyses = []
        if want_paths:
            results = list(pool.map(per_predictor, range(d)))
            analyses = [r[0] for r in results]
            counts["local_effects"] = int(sum(r[1] for r in results))

        surfaces = {}
        if need_second and all_numeric and d >= 2:
            pairs = [(j, l) for j in range(d) for l in range(j + 1, d)]

            def per_pair(pair):
                handle = model.fork()
                return ale_second_surface(handle, data, pair[0], pair[1], K_pair), handle.eval_counter

            out = list(pool.map(per_pair, pairs))
            surfaces = {pair: s for pair, (s, _) in zip(pairs, out)}
            counts["ale_second"] = int(sum(c for _, c in out))

        mp_values = None
        if "mp" in methods:
            handle = model.fork()
            base = handle.eval_batch(data.matrix())

            def per_mp(j):
                return marginal_permutation_vim(handle, data, j, cfg, base_pred=base)

            mp_values = list(pool.map(per_mp, range(d)))
            counts["mp"] = handle.eval_counter

        shm_values = None
        if "shm" in methods:
            handle = model.fork()

            def per_shm(j):
                return float(np.mean(local_shapley(handle, data, j, cfg) ** 2))

            shm_values = list(pool.map(per_shm, range(d)))
            counts["shm"] = handle.eval_counter

    r2 = None
    r2_reason = None
    if args.r2:
        if not all_numeric:
            r2_reason = "requires all-numeric predictors"
        elif d < 2:
            r2_reason = "requires at least two predictors"
        else:
            handle = model.fork()
            try:
                r2 = r2_ale2(handle, data, [a.curve for a in analyses], surfaces)
            except ValueError as exc:
                r2_reason = str(exc)
            counts["r2_ale2"] = handle.eval_counter

    predictors = []
    for j, col in enumerate(data.columns):
        entry = {"name": col.name, "kind": col.kind}
        if analyses:
            entry["K"] = analyses[j].effects.K
            entry["L"] = analyses[j].L
            entry["evaluations"] = analyses[j].effects.evaluations
        vims = {}
        for method in methods:
            if method == "ale_main":
                vims[method] = vim_entry(analyses[j].ale_main)
            elif method == "qpale":
                vims[method] = vim_entry(analyses[j].qpale.vim)
            elif method == "cpale":
                vims[method] = vim_entry(analyses[j].cpale.vim)
            elif method == "ale_second":
                if not all_numeric:
                    vims[method] = vim_entry(None, "requires all-numeric predictors")
                elif d < 2:
                    vims[method] = vim_entry(analyses[j].ale_main)
                else:
                    vims[method] = vim_entry(ale_second_vim(j, [a.curve for a in analyses], surfaces, data))
            elif method == "mp":
                vims[method] = vim_entry(mp_values[j])
            elif method == "shm":
                vims[method] = vim_entry(shm_values[j])
        entry["vims"] = vims
        predictors.append(entry)

    meta = {
        "version": __version__,
        "n": n,
        "d": d,
        "K": K,
        "L": args.L,
        "K_pair": K_pair if need_second else None,
        "seed": args.seed,
        "model": model.name,
        "data": Path(args.data).name if args.data is not None else f"scenario:{args.scenario}",
        "methods": methods,
        "midpoint": bool(args.midpoint),
        "N": cfg.N if "mp" in methods else None,
        "M": cfg.M if "shm" in methods else None,
        "evaluations": counts,
        "wall_time_s": round(time.perf_counter() - start, 6),
    }
    report = {"meta": meta, "predictors": predictors}
    if args.r2:
        report["r2_ale2"] = {"value": r2} if r2 is not None else {"value": None, "reason": r2_reason}
    plot_inputs = {"analyses": analyses, "surfaces": surfaces, "names": data.names}
    return report, plot_inputs


# ---------------------------------------------------------------------------
# plot data

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def export_plot_data(results: dict, directory) -> list:
    """Write curve, path and surface tables; returns the paths written."""
    analyses = results.get("analyses") or []
    surfaces = results.get("surfaces") or {}
    names = results.get("names") or []
    if not analyses and not surfaces:
        return []
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for a in analyses:
        c = a.curve
        grid = c.grid.tolist()
        path = directory / f"ale_main_{c.name}.csv"
        _write_rows(path, ("z", "f_hat"), zip(grid, c.f_hat))
        written.append(path)
        res = a.cpale if a.cpale is not None else a.qpale
        if res is not None:
            path = directory / f"pale_paths_{c.name}.csv"
            rows = ((k, grid[k], l + 1, res.paths[k, l])
                    for l in range(res.paths.shape[1]) for k in range(res.paths.shape[0]))
            _write_rows(path, ("k", "z", "path_id", "value"), rows)
            written.append(path)
    for (j, l), s in sorted(surfaces.items()):
        path = directory / f"ale_second_{names[j]}_{names[l]}.csv"
        rows = ((s.grid_a[k], s.grid_b[m], s.values[k, m], s.counts[k - 1, m - 1])
                for k in range(1, len(s.grid_a)) for m in range(1, len(s.grid_b)))
        _write_rows(path, ("z_a", "z_b", "value", "count"), rows)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# oracle

def rho_grid(text: str) -> list:
    parts = text.split(":")
    if len(parts) != 3:
        raise ArgumentError("--rho-grid must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ArgumentError("--rho-grid needs step > 0 and stop >= start")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 12) for i in range(count)]


ORACLE_COLUMNS = tuple(f"{f}_{j}" for f in OracleVims.FIELDS for j in (1, 2, 3))


def oracle_rows(beta, rhos) -> list:
    rows = []
    for rho in rhos:
        if not -1.0 < rho < 1.0:
            raise ArgumentError(f"rho must satisfy |rho| < 1, got {rho!r}")
        rows.append(oracle_linear3(beta, rho))
    return rows


# ---------------------------------------------------------------------------
# commands

def cmd_compute(args) -> int:
    report, plot_inputs = compute_report(args)
    text = dumps_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.plots:
        export_plot_data(plot_inputs, args.plots)
    return 0


def cmd_simulate(args) -> int:
    beta = parse_floats(args.beta, "--beta") if args.beta else None
    spec = parse_scenario(args.scenario, args.n, args.seed, args.sigma, beta)
    data = generate_scenario(spec)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_dataset(data, fh)
    else:
        write_dataset(data, sys.stdout)
    return 0


def cmd_oracle(args) -> int:
    beta = parse_floats(args.beta, "--beta")
    if len(beta) != 3:
        raise ArgumentError("--beta needs exactly three coefficients")
    if (args.rho is None) == (args.rho_grid is None):
        raise ArgumentError("give exactly one of --rho or --rho-grid")
    rhos = [args.rho] if args.rho is not None else rho_grid(args.rho_grid)
    rows = oracle_rows(beta, rhos)
    if args.format == "json":
        payload = [{"rho": r.rho, "beta": list(r.beta), **r.as_dict()} for r in rows]
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(("rho",) + ORACLE_COLUMNS)
        for r in rows:
            values = [v for f in OracleVims.FIELDS for v in getattr(r, f)]
            w.writerow([_fmt(r.rho)] + [_fmt(v) for v in values])
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="palevim", description="ALE and path-ALE variable importance for black-box models.")
    p.add_argument("--version", action="version", version=f"palevim {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("compute", help="compute importance measures and write a JSON report")
    c.add_argument("--data", type=Path)
    c.add_argument("--scenario")
    c.add_argument("--n", type=int, default=1000, help="rows to generate with --scenario")
    c.add_argument("--sigma", type=float, help="noise sd of a generated response")
    c.add_argument("--beta", help="coefficients of the gauss3 response, e.g. 1,1,0.5")
    c.add_argument("--model", required=True, help="builtin:<name>[:p1,p2,...] or cmd:<command>")
    c.add_argument("--vims", default=DEFAULT_METHODS)
    c.add_argument("--response")
    c.add_argument("--categorical", help="comma-separated columns to treat as categorical")
    c.add_argument("--K", type=int)
    c.add_argument("--L", type=int)
    c.add_argument("--K-pair", dest="K_pair", type=int)
    c.add_argument("--N", type=int, help="permutation replicates (default 50)")
    c.add_argument("--M", type=int, help="Shapley samples per row (default 100)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--midpoint", action="store_true", help="average interval endpoints in summaries")
    c.add_argument("--r2", action="store_true", help="also report the second-order R^2 coverage")
    c.add_argument("--out")
    c.add_argument("--plots", help="directory for plot-data CSV files")
    c.set_defaults(func=cmd_compute)

    s = sub.add_parser("simulate", help="write a synthetic scenario dataset as CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float)
    s.add_argument("--beta")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="closed-form importances of the linear Gaussian model")
    o.add_argument("--beta", required=True)
    o.add_argument("--rho", type=float)
    o.add_argument("--rho-grid", dest="rho_grid")
    o.add_argument("--format", choices=("text", "json"), default="text")
    o.set_defaults(func=cmd_oracle)
    return p


def _join_negative_values(argv: list) -> list:
    # let "--rho-grid -0.95:0.95:0.05" through argparse's option detection
    out, i = [], 0
    while i < len(argv):
        if argv[i] in ("--rho-grid", "--rho", "--beta") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_join_negative_values(argv))
        if args.command is None:
            raise ArgumentError("choose a command: compute, simulate or oracle")
        return args.func(args)
    except (ModelError, SchemaError) as exc:
        print(f"palevim: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ArgumentError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"palevim: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except OSError as exc:
        print(f"palevim: error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
