"""Command-line front end: run, sweep, search-c3, eig, verify.

Configuration is a single JSON document; every schedule constant override
lives under ``schedule.constants``.  Outputs (report.json, traces.csv,
schedule.json, sweep.csv) land in ``--out``, overridden by the
``TENSORSPIKE_OUT`` environment variable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

import numpy as np

from .model import ModelError
from .noise_oracle import BackendError, FreshnessError, NoiseOracle
from .pipeline import (ConfigError, RunConfig, RunReport,
                       deterministic_random_parts, run_mpsnsga,
                       samples_until_aligned, build_schedule)
from .resources import SampleBudgetExceeded
from .schedule import ScheduleError, reference_search
from .sga_core import NumericalAbort
from .spectral import top_eigvec_ga, top_eigvec_power
from .verify import run_suites

CSV_SCHEMA_LINE = "# tensorspike-v1"

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_VALIDATION_ERRORS = (ConfigError, ScheduleError, ModelError, BackendError,
                      ValueError, KeyError, json.JSONDecodeError)
_RUNTIME_ERRORS = (NumericalAbort, SampleBudgetExceeded, FreshnessError)


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_out(args) -> Path:
    out = os.environ.get("TENSORSPIKE_OUT") or args.out or "tensorspike-out"
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _apply_cli_overrides(doc: dict, args) -> dict:
    run = doc.setdefault("run", {})
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "trace_stride", None) is not None:
        run["trace_stride"] = args.trace_stride
    if getattr(args, "instrument", False):
        run["instrument"] = True
    if getattr(args, "jobs", None) is not None:
        run["jobs"] = args.jobs
    return doc


def _write_traces(path: Path, traces: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_SCHEMA_LINE + "\n")
        fh.write("tau,phase,block,step,eta,alpha,frob_norm,reward_value\n")
        for tau, phase, block, step, eta, alpha, frob, reward in traces:
            fh.write(f"{tau},{phase},{block},{step},{eta!r},{alpha!r},{frob!r},{reward!r}\n")


def _write_report(outdir: Path, report: RunReport) -> None:
    (outdir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (outdir / "schedule.json").write_text(
        json.dumps(report.schedule, sort_keys=True, indent=1), encoding="utf-8")
    _write_traces(outdir / "traces.csv", report.traces)


def cmd_run(args) -> int:
    try:
        doc = _apply_cli_overrides(_load_json(args.config), args)
        cfg = RunConfig.from_dict(doc)
    except _VALIDATION_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = _resolve_out(args)
    try:
        report = run_mpsnsga(cfg)
    except _VALIDATION_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _RUNTIME_ERRORS as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_report(outdir, report)
    print(f"max_loss={report.losses['max_loss']:.6g} "
          f"N={report.resources['samples_used']} tau_star={report.tau_star}")
    return EXIT_OK


def _sweep_cell(doc: dict) -> dict:
    cfg = RunConfig.from_dict(doc["config"])
    report = run_mpsnsga(cfg)
    row = {
        "d": doc["d"],
        "lambda": doc["lambda"],
        "rho": doc["rho"],
        "seed": doc["seed"],
        "N": report.resources["samples_used"],
        "S": report.resources["state_bits"],
        "max_loss": report.losses["max_loss"],
        "success": 1 if report.losses["max_loss"] <= 0.1 else 0,
    }
    if cfg.instrument:
        instance = cfg.instance.build()
        sched, _ = build_schedule(cfg, instance)
        n_align = samples_until_aligned(instance, sched, cfg.noise, cfg.seed)
        row["samples_to_align"] = -1 if n_align is None else n_align
    return row


def cmd_sweep(args) -> int:
    try:
        doc = _load_json(args.config)
        base = doc["base"]
        axes = doc.get("sweep", {})
        order = int(base["instance"]["order"])
        dims_axis = [int(d) for d in axes.get("d", [])] or [None]
        snr_axis = [float(x) for x in axes.get("snr", [])] or [None]
        rho_axis = axes.get("rho", [None])
        seed_axis = [int(s) for s in axes.get("seeds", [0])]
        jobs = args.jobs or int(base.get("run", {}).get("jobs", 1))
        cells = []
        for d in dims_axis:
            for snr in snr_axis:
                for rho in rho_axis:
                    for seed in seed_axis:
                        cell = json.loads(json.dumps(base))
                        inst = cell["instance"]
                        if d is not None:
                            inst["dims"] = [d] * order
                        if snr is not None:
                            inst["snr"] = snr
                        if rho is not None:
                            inst["spike_mode"] = "paired_correlation"
                            inst["rho"] = float(rho)
                        inst["seed"] = seed
                        cell.setdefault("noise", {})["seed"] = seed
                        cell.setdefault("run", {})["seed"] = seed
                        if getattr(args, "instrument", False):
                            cell["run"]["instrument"] = True
                        cells.append({
                            "config": cell,
                            "d": inst["dims"][0] if d is None else d,
                            "lambda": inst["snr"],
                            "rho": (inst.get("rho") if inst.get("spike_mode") ==
                                    "paired_correlation" else None),
                            "seed": seed,
                        })
        # validate every cell (config and instance) before launching anything
        for cell in cells:
            RunConfig.from_dict(cell["config"]).instance.build()
    except _VALIDATION_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = _resolve_out(args)
    try:
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_sweep_cell, cells))
        else:
            rows = [_sweep_cell(c) for c in cells]
    except _RUNTIME_ERRORS as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    cols = ["d", "lambda", "rho", "seed", "N", "S", "max_loss", "success"]
    if rows and "samples_to_align" in rows[0]:
        cols.append("samples_to_align")
    with open(outdir / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(CSV_SCHEMA_LINE + "\n")
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join("" if r.get(c) is None else repr(r[c]) for c in cols) + "\n")
    print(f"wrote {len(rows)} rows to {outdir / 'sweep.csv'}")
    return EXIT_OK


def cmd_search_c3(args) -> int:
    try:
        doc = _load_json(args.config)
        cfg = RunConfig.from_dict(doc)
        if not (0.0 < cfg.kappa < 1.0):
            raise ConfigError(f"kappa must lie in (0, 1), got {cfg.kappa}")
        instance = cfg.instance.build()
    except _VALIDATION_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    oracle = NoiseOracle(cfg.noise, instance.dims, stream_key=(5,))
    w0 = None
    if instance.order % 2:
        w0 = deterministic_random_parts(instance.dims, cfg.seed)[0]
    try:
        res = reference_search(oracle, instance, cfg.kappa, cfg.delta,
                               w0=w0, constants=cfg.constants)
    except _RUNTIME_ERRORS as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for r in res.rounds:
        print(f"tau={r.tau} N1={r.n1} |mean|={r.abs_mean:.6g} "
              f"threshold={r.threshold:.6g} accepted={r.accepted}")
    print(f"c3={res.c3 if res.c3 is not None else 'none'}")
    return EXIT_OK


def cmd_eig(args) -> int:
    try:
        mat = np.asarray(_load_json(args.matrix), dtype=float)
        if args.method == "power":
            v = top_eigvec_power(mat)
        else:
            v = top_eigvec_ga(mat, eta_schedule=args.eta, iters=args.iters)
    except _VALIDATION_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(v.tolist()))
    return EXIT_OK


def cmd_verify(args) -> int:
    summary = run_suites(c1_scale=args.hook_c1_scale,
                         nan_hook=args.hook_nan_noise,
                         quick=args.quick)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tensorspike",
                                 description="streaming spiked-tensor recovery harness")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trace-stride", dest="trace_stride", type=int, default=None)
        p.add_argument("--instrument", action="store_true")

    p_run = sub.add_parser("run", help="execute one full pipeline run")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid of runs, one CSV row per cell")
    common(p_sweep)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_search = sub.add_parser("search-c3", help="reference parameter search")
    common(p_search)
    p_search.set_defaults(fn=cmd_search_c3)

    p_eig = sub.add_parser("eig", help="top eigenvector of a matrix (debugging)")
    p_eig.add_argument("--matrix", required=True, help="JSON file with a nested list")
    p_eig.add_argument("--method", choices=("power", "ga"), default="power")
    p_eig.add_argument("--eta", type=float, default=1.0)
    p_eig.add_argument("--iters", type=int, default=2000)
    p_eig.set_defaults(fn=cmd_eig)

    p_ver = sub.add_parser("verify", help="run the built-in invariant suites")
    p_ver.add_argument("--hook-c1-scale", type=float, default=1.0,
                       help="test hook: scale the noise envelope constant")
    p_ver.add_argument("--hook-nan-noise", action="store_true",
                       help="test hook: inject a NaN noise sample")
    p_ver.add_argument("--quick", action="store_true")
    p_ver.set_defaults(fn=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
