"""Command-line driver: ``degenbss synth | separate | eval``.

Exit codes: 0 on success, 1 on usage or data errors, 2 when a solver stops
without meeting its tolerances (outputs are still written and report.json
carries ``"converged": false``).
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import synth
from .clustering import ClusterOptions, estimate_mixing_by_clustering
from .cone import recover_pseudo_inverse, score_columns, select_extreme_columns
from .core import condition_number
from .errors import ConvergenceError, DegenBSSError, UsageError
from .io import read_matrix_csv, write_json, write_matrix_csv
from .l1 import L1Options, l1_certificate, recover_sources_l1
from .metrics import evaluate, negative_energy_ratio
from .qp import QpOptions, implied_mixing, refine_inverse

SCHEMA = 1
METHODS = ("nn", "kmeans", "kmeans-qp", "kmeans-l1")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", type=Path, required=True, help="output directory")

    p = _Parser(prog="degenbss", description="Blind separation of nearly degenerate nonnegative mixtures.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scenario")
    s.add_argument("--preset", required=True, choices=sorted(synth.PRESETS))
    s.add_argument("--snr-db", type=float, default=None, help="noise level; omit for noiseless data")

    r = sub.add_parser("separate", parents=[common], help="estimate A and S from X")
    r.add_argument("--input", type=Path, required=True, help="X.csv or a scenario directory containing it")
    r.add_argument("--method", choices=METHODS, default="kmeans-qp")
    r.add_argument("--n-sources", type=int, default=None, help="number of sources (default: rows of X)")
    r.add_argument("--restarts", type=int, default=16)
    r.add_argument("--norm-floor", type=float, default=0.02)
    r.add_argument("--theta-min", type=float, default=1e-6, help="nn: minimum angle between picked columns")
    r.add_argument("--feas-tol", type=float, default=1e-9)
    r.add_argument("--stat-tol", type=float, default=1e-7)
    r.add_argument("--qp-max-iters", type=int, default=200)
    r.add_argument("--mu", type=float, default=1e-4, help="l1 penalty relative to max|A^T X| (default 1e-4)")
    r.add_argument("--l1-mode", choices=("penalized", "lp"), default="penalized")

    e = sub.add_parser("eval", parents=[common], help="score a separation against ground truth")
    e.add_argument("--scenario", type=Path, help="scenario directory (supplies S.csv and A.csv)")
    e.add_argument("--run", type=Path, help="separate output directory (supplies S_hat.csv and A_hat.csv)")
    e.add_argument("--s-hat", type=Path)
    e.add_argument("--s-true", type=Path)
    e.add_argument("--a-hat", type=Path)
    e.add_argument("--a-true", type=Path)
    return p


def cmd_synth(args) -> int:
    scen = synth.preset(args.preset, snr_db=args.snr_db, seed=args.seed)
    scen.save(args.out)
    print(f"wrote {args.preset} scenario to {args.out}")
    return 0


def _load_x(path: Path) -> np.ndarray:
    if path.is_dir():
        path = path / "X.csv"
    return read_matrix_csv(path)


def _run_config(args, n: int) -> dict:
    cfg = {"method": args.method, "n_sources": n, "seed": args.seed}
    if args.method == "nn":
        cfg["nn"] = {"norm_floor": args.norm_floor, "theta_min": args.theta_min}
    else:
        cfg["clustering"] = asdict(ClusterOptions(n, args.restarts, norm_floor=args.norm_floor, seed=args.seed))
    if args.method == "kmeans-qp":
        cfg["qp"] = asdict(QpOptions(args.feas_tol, args.stat_tol, args.qp_max_iters))
    if args.method == "kmeans-l1":
        cfg["l1"] = {**asdict(L1Options(mu_scale=args.mu, mode=args.l1_mode)), "mixing": "estimate"}
    return cfg


def cmd_separate(args) -> int:
    X = _load_x(args.input)
    n = args.n_sources if args.n_sources is not None else X.shape[0]
    if n < 2:
        raise UsageError("--n-sources must be at least 2")
    if n != X.shape[0]:
        raise UsageError(f"only the determined case is supported: X has {X.shape[0]} rows, asked for {n} sources")
    config = _run_config(args, n)  # validates every option before any compute

    timings = {}
    report = {"schema": SCHEMA, "input": args.input.name, "config": config, "converged": True}
    t0 = time.perf_counter()
    if args.method == "nn":
        scores = score_columns(X, norm_floor=args.norm_floor)
        est = select_extreme_columns(scores, X, n, theta_min=args.theta_min)
    else:
        cres = estimate_mixing_by_clustering(X, ClusterOptions(**config["clustering"]))
        est = cres.estimate
        report["clustering"] = {"inertia": cres.inertia, "retained_columns": int(cres.retained.size)}
    timings["estimate_s"] = time.perf_counter() - t0
    report["condition_numbers"] = {"A_hat": est.condition_number}
    report["estimate_notes"] = est.notes

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "A_hat.csv", est.matrix)

    t1 = time.perf_counter()
    status = 0
    if args.method in ("nn", "kmeans"):
        S_hat = recover_pseudo_inverse(est, X)
    elif args.method == "kmeans-qp":
        try:
            res = refine_inverse(est, X, QpOptions(**config["qp"]))
        except ConvergenceError as exc:
            res, status = exc.result, 2
            report["converged"] = False
        S_hat = res.S_hat
        report["qp"] = {**res.report.to_dict(), "start_objective": res.start_objective, "active_constraints": len(res.active)}
        report["negative_energy_ratio_pinv"] = negative_energy_ratio(recover_pseudo_inverse(est, X))
        try:
            refined = implied_mixing(res, est.matrix)
        except DegenBSSError as exc:
            refined = None
            report["refined_error"] = str(exc)
        if refined is not None:
            write_matrix_csv(out / "A_refined.csv", refined.matrix)
            report["condition_numbers"]["A_refined"] = refined.condition_number
        report["condition_numbers"]["B"] = condition_number(res.B)
    else:
        opts = L1Options(**{k: v for k, v in config["l1"].items() if k != "mixing"})
        try:
            lres = recover_sources_l1(est, X, opts)
        except ConvergenceError as exc:
            lres, status = exc.result, 2
            report["converged"] = False
        S_hat = np.asarray(lres.S_hat)
        A_used = est.matrix / lres.column_norms
        cert = l1_certificate(A_used, S_hat * lres.column_norms[:, None], X, lres.mu)
        its = [r.iterations for r in lres.reports]
        report["l1"] = {
            "mu": lres.mu,
            "failed_columns": lres.failed_columns,
            "max_iterations": int(max(its)) if its else 0,
            "mean_nnz": float(np.mean([r.nnz for r in lres.reports])) if its else 0.0,
            "max_certificate": float(cert.max()) if cert.size else 0.0,
        }
    timings["recover_s"] = time.perf_counter() - t1
    timings["total_s"] = time.perf_counter() - t0

    write_matrix_csv(out / "S_hat.csv", S_hat)
    report["negative_energy_ratio"] = negative_energy_ratio(S_hat)
    report["timings"] = timings
    write_json(out / "report.json", report)
    print(f"{args.method}: wrote {out}" + ("" if status == 0 else " (solver did not converge)"))
    return status


def cmd_eval(args) -> int:
    s_hat = args.s_hat or (args.run / "S_hat.csv" if args.run else None)
    s_true = args.s_true or (args.scenario / "S.csv" if args.scenario else None)
    if s_hat is None or s_true is None:
        raise UsageError("eval needs --s-hat/--run and --s-true/--scenario")
    a_hat = args.a_hat or (args.run / "A_hat.csv" if args.run and (args.run / "A_hat.csv").exists() else None)
    a_true = args.a_true or (args.scenario / "A.csv" if args.scenario and (args.scenario / "A.csv").exists() else None)
    S_hat = read_matrix_csv(s_hat)
    S_true = read_matrix_csv(s_true)
    A_hat = read_matrix_csv(a_hat) if a_hat else None
    A_true = read_matrix_csv(a_true) if a_true else None
    rep = evaluate(S_hat, S_true, A_hat, A_true)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "eval.json", {"schema": SCHEMA, **rep.to_dict()})
    matched = S_hat[rep.matched_perm] * np.asarray(rep.matched_scales)[:, None]
    n, p = S_true.shape
    with open(out / "traces.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_index,source_id,true_value,recovered_value\n")
        for k in range(n):
            for j in range(p):
                fh.write(f"{j},{k},{S_true[k, j]:.17g},{matched[k, j]:.17g}\n")
    corr = ", ".join(f"{c:.6f}" for c in rep.per_source_correlation)
    print(f"correlations: {corr}; negative energy ratio {rep.negative_energy_ratio:.3g}")
    return 0


COMMANDS = {"synth": cmd_synth, "separate": cmd_separate, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DegenBSSError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
