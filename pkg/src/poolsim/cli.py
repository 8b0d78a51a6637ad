"""Command-line front end.

Subcommands:

* ``validate``       check a config file and print the derived shape
* ``probe-latency``  zero-load latency levels and peak numbers for a config
* ``run``            simulate one matmul and report
* ``sweep``          run a matmul across a cartesian sweep of axes
* ``reproduce-fig2`` the canned three-flavor comparison experiment

Exit codes: 0 on success, 1 for configuration/program problems, 2 when a
simulation aborts (deadlock or cycle limit). Report writers pick CSV or
JSON from the ``--out`` extension; ``--plot``/``--outdir`` render PNG
figures next to the delimited output.
"""

import argparse
import sys
from pathlib import Path

from .engine import (DEFAULT_MAX_CYCLES, DEFAULT_WATCHDOG, ProgramConfigMismatch,
                     SimulationError, run, run_sweep)
from .kernel import GeneratorError, generate_matmul
from .metrics import build_report, compare_flavors
from .topology import (ConfigError, build_config, load_config_file,
                       peak_gflops, validate_config, zero_load_latency)

_FLAVOR_CONFIGS = ("baseline", "systolic", "vectorial")


def _parse_dims(text: str):
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"dims must look like MxNxK, got {text!r}")
    try:
        m, n, k = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"dims must be three integers, got {text!r}")
    if m <= 0 or n <= 0 or k <= 0:
        raise argparse.ArgumentTypeError("dims must be positive")
    return m, n, k


def _parse_grid(text: str):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(
            f"grid must look like ROWSxCOLS, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_axis(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(
            f"axis must look like name=v1,v2,..., got {text!r}")
    name, _, values = text.partition("=")
    out = []
    for chunk in values.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            out.append(int(chunk))
        except ValueError:
            try:
                out.append(float(chunk))
            except ValueError:
                out.append(chunk)
    if not out:
        raise argparse.ArgumentTypeError(f"axis {name!r} has no values")
    return name.strip(), out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poolsim",
        description="cycle-approximate manycore cluster simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("config", type=Path)

    p = sub.add_parser("probe-latency",
                       help="print zero-load latency levels for a config")
    p.add_argument("config", type=Path)
    p.add_argument("--core", type=int, default=0,
                   help="origin core (default 0)")

    p = sub.add_parser("run", help="simulate one matmul")
    p.add_argument("config", type=Path)
    p.add_argument("--dims", type=_parse_dims, default=(64, 64, 64),
                   metavar="MxNxK", help="problem size (default 64x64x64)")
    p.add_argument("--unroll", type=int, help="baseline k-unroll factor")
    p.add_argument("--grid", type=_parse_grid, metavar="RxC",
                   help="systolic core grid")
    p.add_argument("--vl", type=int, help="vectorial vector length")
    p.add_argument("--trace", type=Path,
                   help="write per-request CSV trace here")
    p.add_argument("--out", type=Path,
                   help="report file (.json for JSON, else CSV)")
    p.add_argument("--plot", type=Path,
                   help="render the cycle-composition figure here (PNG)")
    p.add_argument("--max-cycles", type=int, default=DEFAULT_MAX_CYCLES)
    p.add_argument("--watchdog", type=int, default=DEFAULT_WATCHDOG,
                   help="abort after this many cycles without progress")
    p.add_argument("--seed", type=int, default=0,
                   help="echoed into reports; kernels are deterministic")

    p = sub.add_parser("sweep", help="sweep config or kernel axes")
    p.add_argument("config", type=Path)
    p.add_argument("--axis", type=_parse_axis, action="append", required=True,
                   metavar="NAME=V1,V2,...",
                   help="axis to sweep; repeat for a cartesian product")
    p.add_argument("--dims", type=_parse_dims, default=(64, 64, 64),
                   metavar="MxNxK")
    p.add_argument("--out", type=Path)
    p.add_argument("--plot", type=Path,
                   help="PNG along the first axis (single-axis sweeps)")
    p.add_argument("--max-cycles", type=int, default=DEFAULT_MAX_CYCLES)
    p.add_argument("--watchdog", type=int, default=DEFAULT_WATCHDOG)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("reproduce-fig2",
                       help="three-flavor matmul comparison experiment")
    p.add_argument("config_dir", type=Path,
                   help="directory holding baseline.cfg, systolic.cfg, "
                        "vectorial.cfg")
    p.add_argument("--dims", type=_parse_dims, default=(256, 256, 256),
                   metavar="MxNxK")
    p.add_argument("--outdir", type=Path, default=Path("fig2-out"))
    p.add_argument("--max-cycles", type=int, default=DEFAULT_MAX_CYCLES)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_validated(path: Path):
    raw = load_config_file(path)
    return validate_config(build_config(raw))


def _print_summary(report):
    print(f"flavor={report.flavor} dims={report.m}x{report.n}x{report.k} "
          f"cycles={report.total_cycles} runtime={report.runtime_us:.1f}us")
    print(f"  utilization={report.utilization:.4f} "
          f"achieved={report.achieved_gflops:.1f}/{report.peak_gflops:.1f} GFLOP/s "
          f"area={report.cluster_area:.1f} "
          f"perf/area={report.gflops_per_area:.2f}")
    stalls = ", ".join(f"{name.replace('stall_', '').replace('_fraction', '')}"
                       f"={value:.3f}"
                       for name, value in report.stall_fractions.items()
                       if value >= 0.0005)
    print(f"  busy={report.busy_fraction:.3f} "
          + (f"stalls: {stalls}" if stalls else "stalls: none"))
    if report.partial:
        print("  ** partial: run aborted before the final barrier **")


def _kernel_params(args):
    params = {}
    if getattr(args, "unroll", None) is not None:
        params["unroll"] = args.unroll
    if getattr(args, "grid", None) is not None:
        params["rows"], params["cols"] = args.grid
    if getattr(args, "vl", None) is not None:
        params["vl"] = args.vl
    return params


def cmd_validate(args) -> int:
    cfg = _load_validated(args.config)
    print(f"{args.config}: ok")
    print(f"  flavor={cfg.flavor.value} cores={cfg.total_cores} "
          f"banks={cfg.total_banks} tiles={cfg.total_tiles}")
    print(f"  scratchpad={cfg.spm_bytes // 1024} KiB in {cfg.total_banks} banks "
          f"(banking factor {cfg.banking_factor:g})")
    print(f"  compute units={cfg.compute_units} "
          f"peak={peak_gflops(cfg):.1f} GFLOP/s")
    return 0


def cmd_probe_latency(args) -> int:
    cfg = _load_validated(args.config)
    core = args.core
    if not 0 <= core < cfg.total_cores:
        print(f"error: core {core} outside 0..{cfg.total_cores - 1}",
              file=sys.stderr)
        return 1
    tile = core // cfg.cores_per_tile
    group = tile // cfg.tiles_per_group
    print(f"zero-load latency from core {core} "
          f"(tile {tile}, group {group}):")
    local_bank = tile * cfg.banks_per_tile
    rows = [("same tile", local_bank)]
    if cfg.tiles_per_group > 1:
        other_tile = tile + 1 if tile % cfg.tiles_per_group < cfg.tiles_per_group - 1 else tile - 1
        rows.append(("same group", other_tile * cfg.banks_per_tile))
    if cfg.groups > 1:
        other_group = (group + 1) % cfg.groups
        rows.append(("cross group",
                     other_group * cfg.tiles_per_group * cfg.banks_per_tile))
    for name, bank in rows:
        print(f"  {name:<12}: {zero_load_latency(cfg, core, bank)} cycles")
    print(f"peak throughput: {peak_gflops(cfg):.1f} GFLOP/s")
    return 0


def cmd_run(args) -> int:
    cfg = _load_validated(args.config)
    m, n, k = args.dims
    program = generate_matmul(cfg, m, n, k, **_kernel_params(args))
    trace_handle = open(args.trace, "w") if args.trace else None
    exit_code = 0
    try:
        counters = run(cfg, program, max_cycles=args.max_cycles,
                       watchdog=args.watchdog, trace=trace_handle)
    except SimulationError as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        counters = exc.counters
        exit_code = 2
        if counters is None:
            return exit_code
    finally:
        if trace_handle:
            trace_handle.close()
    report = build_report(cfg, counters)
    _print_summary(report)
    if args.out:
        from . import reporting
        reporting.write_reports(args.out, [report], extra={"seed": args.seed})
        print(f"report written to {args.out}")
    if args.plot:
        from . import reporting
        reporting.render_stall_breakdown(args.plot, [report])
        print(f"figure written to {args.plot}")
    return exit_code


def cmd_sweep(args) -> int:
    raw = load_config_file(args.config)
    axes = {}
    for name, values in args.axis:
        if name in axes:
            print(f"error: axis {name!r} given twice", file=sys.stderr)
            return 1
        axes[name] = values
    points = run_sweep(raw, axes, dims=args.dims,
                       max_cycles=args.max_cycles, watchdog=args.watchdog)
    reports = [build_report(p.config, p.counters) for p in points]
    for p, report in zip(points, reports):
        label = " ".join(f"{k}={v}" for k, v in p.point.items())
        print(f"{label}: cycles={report.total_cycles} "
              f"utilization={report.utilization:.4f} "
              f"achieved={report.achieved_gflops:.1f} GFLOP/s")
    if args.out:
        from . import reporting
        if str(args.out).endswith(".json"):
            doc = [{"point": p.point, "report": r.to_dict()}
                   for p, r in zip(points, reports)]
            import json
            with open(args.out, "w") as fh:
                json.dump({"sweep": doc, "seed": args.seed}, fh, indent=2)
                fh.write("\n")
        else:
            import csv
            from .metrics import REPORT_COLUMNS
            from .reporting import _float
            axis_names = list(axes)
            with open(args.out, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(axis_names + list(REPORT_COLUMNS))
                for p, r in zip(points, reports):
                    writer.writerow([p.point[a] for a in axis_names]
                                    + [_float(v) for v in r.to_row()])
        print(f"sweep written to {args.out}")
    if args.plot:
        if len(axes) != 1:
            print("error: --plot supports single-axis sweeps only",
                  file=sys.stderr)
            return 1
        from . import reporting
        axis_name = next(iter(axes))
        reporting.render_sweep(args.plot, [p.point for p in points],
                               reports, axis_name)
        print(f"figure written to {args.plot}")
    return 0


def cmd_reproduce_fig2(args) -> int:
    from . import reporting
    outdir = args.outdir
    outdir.mkdir(parents=True, exist_ok=True)
    m, n, k = args.dims
    reports = []
    exit_code = 0
    for name in _FLAVOR_CONFIGS:
        path = args.config_dir / f"{name}.cfg"
        if not path.exists():
            print(f"error: missing config {path}", file=sys.stderr)
            return 1
        cfg = _load_validated(path)
        program = generate_matmul(cfg, m, n, k)
        print(f"running {name} ({cfg.total_cores} cores, "
              f"{program.total_instructions()} instructions)...", flush=True)
        try:
            counters = run(cfg, program, max_cycles=args.max_cycles)
        except SimulationError as exc:
            print(f"simulation aborted: {exc}", file=sys.stderr)
            counters = exc.counters
            exit_code = 2
            if counters is None:
                return exit_code
        reports.append(build_report(cfg, counters))
    for report in reports:
        _print_summary(report)
    rows = compare_flavors(reports)
    print(f"{'flavor':<10} {'cycles':>9} {'util':>7} {'GF/s':>7} "
          f"{'area':>6} {'GF/s/area':>10} {'util vs base':>13}")
    for row in rows:
        print(f"{row['flavor']:<10} {row['total_cycles']:>9} "
              f"{row['utilization']:>7.4f} {row['achieved_gflops']:>7.1f} "
              f"{row['cluster_area']:>6.1f} {row['gflops_per_area']:>10.2f} "
              f"{row['utilization_vs_baseline_pct']:>+12.1f}%")
    reporting.write_reports_csv(outdir / "reports.csv", reports)
    reporting.write_reports_json(outdir / "reports.json", reports,
                                 extra={"seed": args.seed,
                                        "dims": list(args.dims)})
    reporting.write_comparison_csv(outdir / "comparison.csv", rows)
    reporting.render_comparison(outdir / "comparison.png", reports)
    reporting.render_stall_breakdown(outdir / "stalls.png", reports)
    print(f"outputs in {outdir}/: reports.csv reports.json comparison.csv "
          f"comparison.png stalls.png")
    return exit_code


_HANDLERS = {
    "validate": cmd_validate,
    "probe-latency": cmd_probe_latency,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "reproduce-fig2": cmd_reproduce_fig2,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print("error: invalid configuration:", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return 1
    except (GeneratorError, ProgramConfigMismatch, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
