"""Report serialization and figures.

CSV and JSON writers keep a stable column order (see metrics.REPORT_COLUMNS)
so outputs diff cleanly. Figure rendering imports matplotlib lazily and
forces the Agg backend, so the simulator itself never needs a display and
commands that do not plot never pay the import cost.
"""

import csv
import json
from pathlib import Path

from .metrics import COMPARISON_COLUMNS, REPORT_COLUMNS, SimReport


def _float(value):
    # round floats for the delimited output; full precision lives in JSON
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def write_reports_csv(path, reports):
    """One CSV row per report, columns in REPORT_COLUMNS order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            writer.writerow([_float(v) for v in report.to_row()])


def write_reports_json(path, reports, extra=None):
    """Full-precision dump; *extra* merges top-level metadata in."""
    doc = {"reports": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_comparison_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for row in rows:
            writer.writerow([_float(row[c]) for c in COMPARISON_COLUMNS])


def write_reports(path, reports, extra=None):
    """Dispatch on extension: .json gets the full dump, anything else CSV."""
    if str(path).endswith(".json"):
        write_reports_json(path, reports, extra)
    else:
        write_reports_csv(path, reports)


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


_FLAVOR_COLORS = {"baseline": "#888888", "systolic": "#d08047",
                  "vectorial": "#4878a8"}

_STALL_SEGMENTS = (
    ("busy_fraction", "busy", "#4878a8"),
    ("stall_raw_fraction", "register hazard", "#d08047"),
    ("stall_scoreboard_fraction", "scoreboard full", "#a05050"),
    ("stall_queue_full_fraction", "queue full", "#b8a040"),
    ("stall_queue_empty_fraction", "queue empty", "#70a070"),
    ("stall_barrier_fraction", "barrier", "#9070a0"),
    ("idle_fraction", "idle", "#cccccc"),
)


def render_comparison(path, reports):
    """Four-panel flavor comparison: utilization, throughput, cycles, area."""
    plt = _plt()
    flavors = [r.flavor for r in reports]
    colors = [_FLAVOR_COLORS.get(f, "#666666") for f in flavors]
    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    panels = (
        ("utilization", "FPU utilization", lambda r: r.utilization),
        ("achieved_gflops", "achieved GFLOP/s", lambda r: r.achieved_gflops),
        ("total_cycles", "total cycles", lambda r: r.total_cycles),
        ("gflops_per_area", "GFLOP/s per area unit",
         lambda r: r.gflops_per_area),
    )
    for ax, (key, title, get) in zip(axes.flat, panels):
        values = [get(r) for r in reports]
        ax.bar(flavors, values, color=colors)
        ax.set_title(title)
        ax.grid(axis="y", alpha=0.3)
        if key == "utilization":
            ax.set_ylim(0, 1)
    sample = reports[0]
    fig.suptitle(f"matmul {sample.m}x{sample.n}x{sample.k} on "
                 f"{sample.total_cores}-core cluster")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_stall_breakdown(path, reports):
    """Stacked cycle-composition bars, one per report."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 2 + 0.8 * len(reports)))
    labels = [r.flavor for r in reports]
    left = [0.0] * len(reports)
    for key, name, color in _STALL_SEGMENTS:
        widths = []
        for r in reports:
            if key in ("busy_fraction", "idle_fraction"):
                widths.append(getattr(r, key))
            else:
                widths.append(r.stall_fractions[key])
        ax.barh(labels, widths, left=left, label=name, color=color)
        left = [a + b for a, b in zip(left, widths)]
    ax.set_xlim(0, 1)
    ax.set_xlabel("fraction of core-cycles")
    ax.legend(loc="center left", bbox_to_anchor=(1.0, 0.5), fontsize=8)
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_sweep(path, points, reports, axis_name):
    """Utilization (left axis) and cycles (right axis) along one sweep axis."""
    plt = _plt()
    xs = [p[axis_name] for p in points]
    numeric = all(isinstance(x, (int, float)) for x in xs)
    positions = xs if numeric else list(range(len(xs)))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(positions, [r.utilization for r in reports], "o-",
            color="#4878a8", label="utilization")
    ax.set_xlabel(axis_name)
    ax.set_ylabel("FPU utilization", color="#4878a8")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(positions, [r.total_cycles for r in reports], "s--",
             color="#d08047", label="cycles")
    ax2.set_ylabel("total cycles", color="#d08047")
    if not numeric:
        ax.set_xticks(positions)
        ax.set_xticklabels([str(x) for x in xs])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
