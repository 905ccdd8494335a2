"""Command-line front end: analyze, sweep, simulate, transfer, scaling.

Every command is deterministic given its inputs and seed, writes a run
manifest into its reports, and exits 0 on success, 2 on input errors, 3 on
model non-convergence.  Report paths get a rendered PNG figure next to the
delimited output unless --no-figures is passed.  Sweeps fan out over a
thread pool capped by the XBAR_SCALE_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

from . import reports
from .addrmap import AddressError, AddressMap, WORD_BYTES, map_address
from .analytic import (QueueModel, ScalingParams, cluster_amat, kung_feasible,
                       matmul_arithmetic_intensity)
from .hbml import (HbmConfig, TransferError, bandwidth_matrix, link_ceiling,
                   transfer_scenario)
from .simcore import FabricBuildError, build_fabric, run
from .topology import (ConfigError, HierarchyConfig, LatencyLadder,
                       LevelBounds, complexity_metrics, enumerate_hierarchies,
                       validate)
from . import workloads

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3


class InputError(Exception):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from exc


def _parse_ladder(text: str) -> LatencyLadder:
    try:
        return LatencyLadder(tuple(int(t) for t in text.split(",")))
    except ValueError as exc:
        raise InputError(f"bad ladder {text!r}: {exc}") from exc


def _config_and_ladder(args) -> tuple[HierarchyConfig, LatencyLadder]:
    doc = _load_json(args.config)
    cfg = HierarchyConfig.from_dict(doc)
    if getattr(args, "ladder", None):
        ladder = _parse_ladder(args.ladder)
    elif "ladder" in doc:
        ladder = LatencyLadder(tuple(int(c) for c in doc["ladder"]))
    else:
        ladder = LatencyLadder.default_for(cfg)
    return cfg, ladder


def _analysis_row(cfg: HierarchyConfig, ladder: LatencyLadder,
                  p: float = 1.0, tput_mode: str = "weighted") -> dict:
    est = cluster_amat(cfg, ladder, p)
    if not est.converged:
        raise RuntimeError(f"contention model did not converge for {cfg.name()}")
    comp = complexity_metrics(cfg, ladder)
    tput = est.throughput
    if tput_mode == "bottleneck":
        tput = 1.0 / (1.0 + max(est.class_contention))
    return {
        "config": cfg.name(),
        "zero_load_cycles": round(est.zero_load, 3),
        "amat_cycles": round(est.amat, 3),
        "throughput_req_pe_cycle": round(tput, 3),
        "total_complexity": comp.total_complexity,
        "critical_complexity": comp.critical_complexity,
        "critical_comb_delay": round(comp.critical_comb_delay, 1),
    }


def _emit(args, payload_rows, columns, manifest, figure=None):
    """Write rows as CSV or JSON per --format/--out; render figure beside."""
    fmt = getattr(args, "format", None) or "json"
    out = getattr(args, "out", None)
    if out:
        if fmt == "csv" or out.endswith(".csv"):
            reports.write_csv(out, columns, payload_rows, manifest)
        else:
            reports.write_json(out, {"rows": payload_rows}, manifest)
        if figure is not None and not args.no_figures:
            figure(str(Path(out).with_suffix(".png")))
        print(f"wrote {out}")
    else:
        doc = {"rows": payload_rows, "manifest": manifest.finish().to_dict()}
        json.dump(doc, sys.stdout, indent=2)
        print()


# --- commands ---------------------------------------------------------------

def cmd_analyze(args) -> int:
    cfg, ladder = _config_and_ladder(args)
    manifest = reports.RunManifest.start(
        "analyze", {"config": cfg.name(), "ladder": ladder.round_trip_cycles})
    row = _analysis_row(cfg, ladder, tput_mode=args.throughput_mode)
    comp = complexity_metrics(cfg, ladder)
    row_with_breakdown = dict(row)
    row_with_breakdown["complexity_breakdown"] = comp.breakdown()
    if args.out and (args.format == "csv" or args.out.endswith(".csv")):
        reports.write_csv(args.out, reports.SWEEP_COLUMNS, [row], manifest)
        print(f"wrote {args.out}")
    elif args.out:
        reports.write_json(args.out, row_with_breakdown, manifest)
        print(f"wrote {args.out}")
    else:
        doc = dict(row_with_breakdown)
        doc["manifest"] = manifest.finish().to_dict()
        json.dump(doc, sys.stdout, indent=2)
        print()
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _load_json(args.bounds)
    total = int(doc.get("total_pes", 1024))
    bf = int(doc.get("banking_factor", 4))
    bounds = LevelBounds.from_dict(doc)
    configs = enumerate_hierarchies(total, bf, bounds)
    manifest = reports.RunManifest.start("sweep", doc)
    if not configs:
        print("warning: bounds admit no configurations", file=sys.stderr)
        reports.write_csv(args.out, reports.SWEEP_COLUMNS, [], manifest)
        return EXIT_OK

    workers = int(os.environ.get("XBAR_SCALE_THREADS", "0")) or min(
        8, len(configs))

    def one(cfg):
        return _analysis_row(cfg, LatencyLadder.default_for(cfg),
                             tput_mode=args.throughput_mode)

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(one, configs))
    rows.sort(key=lambda r: (r["amat_cycles"], r["config"]))
    figure = (lambda p: reports.sweep_figure(rows, p)) if rows else None
    _emit(args, rows, reports.SWEEP_COLUMNS, manifest, figure)
    return EXIT_OK


def _make_trace(args, cfg, amap):
    kind = args.pattern
    if kind == "uniform":
        return workloads.gen_uniform(cfg, args.p, args.cycles, args.seed, amap)
    if kind == "local_tile":
        return workloads.gen_local_tile(cfg, args.p, args.cycles, args.seed, amap)
    if kind == "gemm_tiled":
        return workloads.gen_gemm_tiled(cfg, args.m, args.p, amap=amap)
    if kind == "fft_radix4":
        return workloads.gen_fft_radix4(cfg, args.n_points, args.stage, amap=amap)
    if kind == "csr_spmmadd":
        return workloads.gen_csr_spmmadd(cfg, args.rows, args.nnz, args.seed, amap)
    raise InputError(f"unknown pattern {kind!r}")


def cmd_simulate(args) -> int:
    cfg, ladder = _config_and_ladder(args)
    manifest = reports.RunManifest.start(
        "simulate",
        {"config": cfg.name(), "ladder": ladder.round_trip_cycles,
         "pattern": args.pattern, "cycles": args.cycles},
        seed=args.seed)
    amap = AddressMap.default_for(cfg)
    fabric = build_fabric(cfg, ladder, amap,
                          input_queue_depth=args.queue_depth)
    if args.trace:
        trace = workloads.Trace.load_jsonl(args.trace)
    else:
        trace = _make_trace(args, cfg, amap)
    warmup = args.warmup if args.warmup is not None else args.cycles // 10
    stats = run(fabric, trace, args.cycles, warmup=warmup)

    payload = stats.to_dict()
    payload["config"] = cfg.name()
    payload["pattern"] = args.pattern
    if args.out:
        reports.write_json(args.out, payload, manifest)
        hist_rows = [{"class": c, "latency_cycles": l, "count": n}
                     for c, l, n in stats.histogram_rows()]
        hist_path = str(Path(args.out).with_suffix(".hist.csv"))
        reports.write_csv(hist_path, ["class", "latency_cycles", "count"],
                          hist_rows, manifest)
        if not args.no_figures:
            reports.histogram_figure(stats.histogram_rows(),
                                     str(Path(args.out).with_suffix(".png")))
        print(f"wrote {args.out}")
    else:
        payload["manifest"] = manifest.finish().to_dict()
        json.dump(payload, sys.stdout, indent=2)
        print()
    return EXIT_OK


def cmd_transfer(args) -> int:
    doc = _load_json(args.scenario)
    manifest = reports.RunManifest.start("transfer", doc)
    cfg = HierarchyConfig.from_dict(doc.get("config", {"pes_per_tile": 8,
                                                       "tiles_per_subgroup": 8,
                                                       "subgroups_per_group": 4,
                                                       "groups": 4}))
    amap = AddressMap.default_for(cfg)

    if "matrix" in doc:
        grid = doc["matrix"]
        rows = bandwidth_matrix(amap, grid["clocks_mhz"], grid["pin_rates"],
                                int(grid["bytes"]))
        columns = ["clock_mhz", "pin_rate_gbps", "bytes_moved", "cycles",
                   "achieved_gbps", "hbm_utilization", "link_utilization"]
        figure = lambda p: reports.transfer_figure(rows, p)
        _emit(args, rows, columns, manifest, figure)
        return EXIT_OK

    hbm = HbmConfig(
        clock_hz=float(doc["clock_mhz"]) * 1e6,
        pin_rate_gbps=float(doc.get("pin_rate", 3.6)),
        refresh_fraction=float(doc.get("refresh_fraction", 0.03)),
    )
    stats = transfer_scenario(amap, hbm, int(doc["bytes"]),
                              direction=doc.get("direction", "l2_to_l1"))
    payload = stats.to_dict()
    payload["link_ceiling_gbps"] = link_ceiling(hbm) / 1e9
    if args.out:
        reports.write_json(args.out, payload, manifest)
        print(f"wrote {args.out}")
    else:
        payload["manifest"] = manifest.finish().to_dict()
        json.dump(payload, sys.stdout, indent=2)
        print()
    return EXIT_OK


def cmd_scaling(args) -> int:
    doc = _load_json(args.params)
    if "AI" not in doc and "W" in doc:
        doc["AI"] = matmul_arithmetic_intensity(float(doc["W"]))
    manifest = reports.RunManifest.start("scaling", doc)
    s_values = doc.get("S_grid") or [doc.get("S", 1.0)]
    rows = []
    for s in s_values:
        params = ScalingParams.from_dict({**doc, "S": s})
        rep = kung_feasible(params)
        rows.append({
            "S": s,
            "feasible": rep.feasible,
            "slack_cycles": rep.slack_cycles,
            "transfer_cycles": rep.transfer_cycles,
            "compute_cycles": rep.compute_cycles,
        })
    columns = ["S", "feasible", "slack_cycles", "transfer_cycles",
               "compute_cycles"]
    _emit(args, rows, columns, manifest)
    return EXIT_OK


def cmd_addrmap_dump(args) -> int:
    cfg, _ = _config_and_ladder(args)
    amap = AddressMap.default_for(cfg)
    limit = args.limit if args.limit else amap.l1_bytes // WORD_BYTES
    if limit > 1 << 20:
        raise InputError("address table too large; pass --limit")
    manifest = reports.RunManifest.start("addrmap-dump", {"config": cfg.name()})
    rows = []
    for i in range(limit):
        coord, region = map_address(amap, i * WORD_BYTES)
        rows.append({
            "byte_address": i * WORD_BYTES, "region": region,
            "group": coord.group, "subgroup": coord.subgroup,
            "tile": coord.tile, "bank": coord.bank, "row": coord.row,
        })
    columns = ["byte_address", "region", "group", "subgroup", "tile",
               "bank", "row"]
    _emit(args, rows, columns, manifest)
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    cfg, _ = _config_and_ladder(args)
    amap = AddressMap.default_for(cfg)
    trace = _make_trace(args, cfg, amap)
    trace.save_jsonl(args.out)
    print(f"wrote {args.out} ({len(trace)} accesses)")
    return EXIT_OK


# --- wiring -----------------------------------------------------------------

def _add_common(sub, config=True):
    if config:
        sub.add_argument("--config", required=True,
                         help="hierarchy config JSON")
        sub.add_argument("--ladder", help="round-trip cycles, e.g. 1,3,5,7")
    sub.add_argument("--out", help="output path (.json or .csv)")
    sub.add_argument("--format", choices=("json", "csv"))
    sub.add_argument("--no-figures", action="store_true",
                     help="skip PNG rendering next to --out")


def _add_pattern_args(sub):
    sub.add_argument("--pattern", default="uniform",
                     choices=("uniform", "local_tile", "gemm_tiled",
                              "fft_radix4", "csr_spmmadd"))
    sub.add_argument("--p", type=float, default=1.0,
                     help="offered injection rate per PE")
    sub.add_argument("--cycles", type=int, default=10_000)
    sub.add_argument("--seed", type=int, default=1)
    sub.add_argument("--m", type=int, default=64, help="gemm matrix dim")
    sub.add_argument("--n-points", type=int, default=4096, help="FFT size")
    sub.add_argument("--stage", type=int, default=0, help="FFT stage")
    sub.add_argument("--rows", type=int, default=256, help="CSR rows")
    sub.add_argument("--nnz", type=int, default=4, help="CSR nonzeros/row")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xbarscale",
        description="hierarchical PE-to-L1 crossbar fabric models")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("analyze", help="metrics for one configuration")
    _add_common(p)
    p.add_argument("--throughput-mode", choices=("weighted", "bottleneck"),
                   default="weighted")
    p.set_defaults(func=cmd_analyze)

    p = subs.add_parser("sweep", help="design-space sweep to CSV")
    p.add_argument("--bounds", required=True, help="bounds JSON")
    p.add_argument("--throughput-mode", choices=("weighted", "bottleneck"),
                   default="weighted")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("simulate", help="cycle-level fabric simulation")
    _add_common(p)
    _add_pattern_args(p)
    p.add_argument("--warmup", type=int, default=None,
                   help="cycles excluded from stats (default cycles/10)")
    p.add_argument("--queue-depth", type=int, default=1,
                   help="crossbar input queue depth")
    p.add_argument("--trace", help="JSON-lines trace file to replay")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("transfer", help="main-memory link scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_transfer)

    p = subs.add_parser("scaling", help="compute-transfer balance check")
    p.add_argument("--params", required=True, help="parameters JSON")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_scaling)

    p = subs.add_parser("addrmap-dump", help="address decode table to CSV")
    _add_common(p)
    p.add_argument("--limit", type=int, default=0,
                   help="number of words to dump (default: whole L1)")
    p.set_defaults(func=cmd_addrmap_dump)

    p = subs.add_parser("gen-trace", help="write a workload trace")
    p.add_argument("--config", required=True)
    p.add_argument("--ladder")
    _add_pattern_args(p)
    p.add_argument("--out", required=True, help="JSON-lines output path")
    p.set_defaults(func=cmd_gen_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError, AddressError, TransferError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FabricBuildError as exc:
        print(f"fabric build defect: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
