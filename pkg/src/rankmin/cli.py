"""Command-line front end: ``rankmin {solve,sweep,landscape,report}``.

Exit status is 0 on success, 1 on usage or file errors and 2 when a solver
does not converge, a feasible-line direction is degenerate, or a report
has no input records.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import barm, baselines, bench, landscape
from .files import FileFormatError, read_matrix, read_operator, read_vector, write_matrix

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("rankmin")

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


def _load_table(path, table, allowed):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    extra = set(doc) - {table}
    if extra:
        raise UsageError(f"{path}: unknown table {sorted(extra)[0]!r}")
    if table not in doc:
        raise UsageError(f"{path}: missing [{table}] table")
    cfg = doc[table]
    for key in cfg:
        if key not in allowed:
            raise UsageError(f"{path}: unknown key {key!r} in [{table}]")
    return cfg


# ---- solve ---------------------------------------------------------------

def cmd_solve(args):
    op = read_operator(args.op)
    b = read_vector(args.obs)
    if b.size != op.p:
        raise UsageError(f"{args.obs}: {b.size} observations, operator expects {op.p}")
    truth = read_matrix(args.truth) if args.truth else None
    if truth is not None and truth.shape != (op.n, op.m):
        raise UsageError(f"{args.truth}: shape {truth.shape}, expected {(op.n, op.m)}")
    if args.algo == "barm":
        cfg = barm.BarmConfig(mode=args.mode, max_iter=args.max_iter,
                              lam=args.lam if args.lam is not None else 1e-10)
        rep = barm.solve(op, b, cfg)
    elif args.algo == "nuclear":
        if args.lam is None:
            rep = baselines.nuclear_norm_solve(op, b)
        else:
            rep = baselines.nuclear_norm_solve(op, b, baselines.NucConfig(mode="regularized", lam=args.lam))
    else:
        rep = baselines.irls0_solve(op, b)
    write_matrix(args.out, rep.X)
    print(f"residual {rep.residual:.3e}")
    print(f"est_rank {rep.est_rank}")
    print(f"iterations {rep.iterations}")
    if truth is not None:
        print(f"rel {bench.rel(truth, rep.X):.3e}")
    if not rep.converged:
        print("not converged", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---- sweep ---------------------------------------------------------------

SWEEP_KEYS = {
    "kind", "n", "m", "ranks", "p", "observed_fraction", "fr", "trials", "seed", "algorithms",
    "noise_sigma", "decay", "op_decay", "barm_mode", "max_iter", "barm_tol",
    "lambda_barm", "lambda_nuclear", "lambda_irls0",
}


def sweep_spec(cfg):
    """Map a flat [sweep] table onto an :class:`bench.ExperimentSpec`."""
    kw = {k: v for k, v in cfg.items() if not k.startswith("lambda_") and k != "seed"}
    if "seed" in cfg:
        kw["master_seed"] = int(cfg["seed"])
    kw["lambdas"] = {k[len("lambda_"):]: float(v) for k, v in cfg.items() if k.startswith("lambda_")}
    for key in ("kind", "n", "m", "ranks"):
        if key not in kw:
            raise UsageError(f"[sweep] missing required key {key!r}")
    return bench.ExperimentSpec(**kw)


def cmd_sweep(args):
    cfg = _load_table(args.config, "sweep", SWEEP_KEYS)
    try:
        spec = sweep_spec(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    jsonl = os.path.join(args.out, "records.jsonl")
    archive = os.path.join(args.out, "xhat")
    previous = []
    if args.resume and os.path.exists(jsonl):
        previous = bench.read_jsonl(jsonl)
    elif os.path.exists(jsonl):
        os.remove(jsonl)
    cell = {(r, p) for r, p in spec.cells()}
    done = {rec.key for rec in previous
            if (rec.r, rec.p) in cell and (rec.n, rec.m, rec.kind) == (spec.n, spec.m, spec.kind)}

    def sink(recs):
        bench.write_jsonl(recs, jsonl, append=True)

    new = bench.run_sweep(spec, threads=args.threads, skip=done, archive_dir=archive, on_records=sink)
    records = previous + new
    bench.write_summary_csv(bench.summarize(records), os.path.join(args.out, "summary.csv"))
    print(f"{len(new)} new records, {len(records)} total")
    return EXIT_OK


# ---- landscape -----------------------------------------------------------

LANDSCAPE_KEYS = {
    "n", "m", "r", "p", "seed", "eta_min", "eta_max", "eta_step", "etas", "gammas",
    "lambda", "direction", "warm_start",
}


def eta_grid(cfg):
    if "etas" in cfg:
        if any(k in cfg for k in ("eta_min", "eta_max", "eta_step")):
            raise UsageError("give either 'etas' or eta_min/eta_max/eta_step, not both")
        return np.asarray(cfg["etas"], dtype=float)
    lo, hi = float(cfg.get("eta_min", -5.0)), float(cfg.get("eta_max", 5.0))
    step = float(cfg.get("eta_step", 0.1))
    if step <= 0 or hi < lo:
        raise UsageError("eta grid needs eta_step > 0 and eta_max >= eta_min")
    count = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(count), 12)


def cmd_landscape(args):
    cfg = _load_table(args.config, "landscape", LANDSCAPE_KEYS)
    n, m = int(cfg.get("n", 5)), int(cfg.get("m", 5))
    r, p = int(cfg.get("r", 1)), int(cfg.get("p", 10))
    seed = int(cfg.get("seed", 0))
    mode = cfg.get("direction", "nn-difference")
    try:
        etas = eta_grid(cfg)
        op, xstar = bench.landscape_instance(n, m, r, p, seed)
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    try:
        V = landscape.nullspace_direction(op, xstar, mode=mode, seed=seed)
    except landscape.DegenerateDirection as exc:
        print(f"degenerate direction: {exc}", file=sys.stderr)
        return EXIT_FAIL
    trace = landscape.trace_penalties(
        op, xstar, V, etas, cfg.get("gammas", []), lam=float(cfg.get("lambda", 1e-6)),
        warm_start=bool(cfg.get("warm_start", True)), metadata={"seed": seed, "direction": mode},
    )
    with open(args.out, "w") as fh:
        fh.write(trace.to_csv())
    print(f"{etas.size} rows written to {args.out}")
    return EXIT_OK


# ---- report --------------------------------------------------------------

def cmd_report(args):
    try:
        records = bench.read_jsonl(args.inp)
    except OSError as exc:
        raise UsageError(f"{args.inp}: {exc.strerror}") from None
    if not records:
        print(f"{args.inp}: no records", file=sys.stderr)
        return EXIT_FAIL
    rows = bench.summarize(records)
    bench.write_summary_csv(rows, args.out)
    if args.failure_spectra:
        if not os.path.isdir(args.failure_spectra):
            raise UsageError(f"{args.failure_spectra}: not a directory")
        path = os.path.splitext(args.out)[0] + "_failure_spectra.csv"
        groups = {}
        for rec in records:
            groups.setdefault((rec.n, rec.m, rec.r, rec.p, rec.kind, rec.algorithm), []).append(rec)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "m", "r", "p", "kind", "algo", "failures", "spectrum"])
            for key, recs in groups.items():
                s = bench.failure_spectrum(recs, args.failure_spectra)
                if s.size:
                    n_fail = sum(not x.fos_success for x in recs)
                    w.writerow([*key, n_fail, " ".join(f"{v:.17g}" for v in s)])
        print(f"failure spectra written to {path}")
    print(f"{len(rows)} cells written to {args.out}")
    return EXIT_OK


# ---- entry point ---------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="rankmin", description="Affine rank minimization tools.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="recover one matrix")
    s.add_argument("--op", required=True, help="operator descriptor (.json) or dense CSV")
    s.add_argument("--obs", required=True, help="observations, one value per line")
    s.add_argument("--algo", choices=bench.ALGORITHMS, default="barm")
    s.add_argument("--mode", choices=("column", "symmetric"), default="symmetric")
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="ground-truth matrix file for REL")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="run a seeded experiment sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--resume", action="store_true", help="skip trials already in records.jsonl")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("landscape", help="trace rank surrogates along a feasible line")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_landscape)

    s = sub.add_parser("report", help="aggregate sweep records")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--failure-spectra", metavar="DIR", help="directory of archived failure estimates")
    s.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
