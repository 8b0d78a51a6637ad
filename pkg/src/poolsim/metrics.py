"""Derived measurements on top of raw run counters.

The engine reports what happened (cycles, slots, stalls); this module turns
that into the quantities worth comparing across flavors: utilization of the
arithmetic units, achieved throughput against the configured peak, runtime
at the configured clock, cycle composition, and area-normalized throughput.

A report is a flat record with a stable column order so the CSV output is
diffable run to run.
"""

from dataclasses import dataclass, field

from .core import StallReason
from .engine import RawCounters
from .topology import ClusterConfig, area_ledger, peak_gflops

# Stable column order shared by the CSV writer and to_row().
REPORT_COLUMNS = (
    "flavor", "program", "m", "n", "k",
    "total_cores", "compute_units",
    "total_cycles", "runtime_us",
    "fma_slots", "utilization",
    "peak_gflops", "achieved_gflops",
    "busy_fraction", "idle_fraction",
    "stall_raw_fraction", "stall_scoreboard_fraction",
    "stall_queue_full_fraction", "stall_queue_empty_fraction",
    "stall_barrier_fraction",
    "mem_reads", "mem_writes", "avg_grant_wait",
    "tile_area", "cluster_area", "gflops_per_area",
    "partial",
)

_STALL_COLUMN = {
    StallReason.RawHazard: "stall_raw_fraction",
    StallReason.ScoreboardFull: "stall_scoreboard_fraction",
    StallReason.QueueFull: "stall_queue_full_fraction",
    StallReason.QueueEmpty: "stall_queue_empty_fraction",
    StallReason.Barrier: "stall_barrier_fraction",
}


@dataclass
class SimReport:
    """One run, reduced to the headline numbers."""

    flavor: str
    program: str
    m: int
    n: int
    k: int
    total_cores: int
    compute_units: int
    total_cycles: int
    runtime_us: float          # wall time of the kernel at the config clock
    fma_slots: int
    utilization: float         # slots retired / (compute units x cycles)
    peak_gflops: float
    achieved_gflops: float     # utilization x peak, by construction
    busy_fraction: float
    idle_fraction: float
    stall_fractions: dict      # StallReason name -> fraction of core-cycles
    mem_reads: int
    mem_writes: int
    avg_grant_wait: float      # mean cycles a request lost to arbitration
    tile_area: float
    cluster_area: float
    gflops_per_area: float     # achieved throughput per normalized area unit
    partial: bool = False      # counters came from an aborted run
    params: dict = field(default_factory=dict)

    def to_row(self) -> list:
        row = []
        for col in REPORT_COLUMNS:
            if col.startswith("stall_"):
                row.append(self.stall_fractions[col])
            elif col == "partial":
                row.append(int(self.partial))
            else:
                row.append(getattr(self, col))
        return row

    def to_dict(self) -> dict:
        out = dict(zip(REPORT_COLUMNS, self.to_row()))
        out["params"] = dict(self.params)
        return out


def build_report(cfg: ClusterConfig, counters: RawCounters) -> SimReport:
    """Reduce raw counters to a SimReport under *cfg*'s clock and area model."""
    units = cfg.compute_units
    cycles = counters.total_cycles
    core_cycles = counters.total_cores * cycles
    peak = peak_gflops(cfg)
    utilization = counters.fma_slots_total / (units * cycles) if cycles else 0.0
    ledger = area_ledger(cfg)
    achieved = utilization * peak
    stall_fractions = {}
    for reason, col in _STALL_COLUMN.items():
        stall_fractions[col] = (counters.stall_total(reason) / core_cycles
                                if core_cycles else 0.0)
    total_requests = counters.mem_reads + counters.mem_writes
    meta = counters.meta
    return SimReport(
        flavor=counters.flavor,
        program=meta.get("program", ""),
        m=meta.get("m", 0), n=meta.get("n", 0), k=meta.get("k", 0),
        total_cores=counters.total_cores,
        compute_units=units,
        total_cycles=cycles,
        runtime_us=cycles / cfg.frequency_hz * 1e6,
        fma_slots=counters.fma_slots_total,
        utilization=utilization,
        peak_gflops=peak,
        achieved_gflops=achieved,
        busy_fraction=(counters.core_total("busy") / core_cycles
                       if core_cycles else 0.0),
        idle_fraction=(counters.core_total("idle") / core_cycles
                       if core_cycles else 0.0),
        stall_fractions=stall_fractions,
        mem_reads=counters.mem_reads,
        mem_writes=counters.mem_writes,
        avg_grant_wait=(counters.mem_grant_wait / total_requests
                        if total_requests else 0.0),
        tile_area=ledger.tile_area,
        cluster_area=ledger.cluster_area,
        gflops_per_area=(achieved / ledger.cluster_area
                         if ledger.cluster_area else 0.0),
        partial=counters.partial,
        params=meta.get("params", {}),
    )


def compare_flavors(reports) -> list:
    """Relative trade-off table: every flavor against the baseline flavor.

    All reports must describe the same problem size. Returns one dict per
    report with utilization/cycle/area deltas against the baseline entry;
    raises ValueError if no baseline report is present or sizes differ.
    """
    reports = list(reports)
    base = None
    for r in reports:
        if r.flavor == "baseline":
            base = r
            break
    if base is None:
        raise ValueError("comparison needs a baseline-flavor report")
    dims = {(r.m, r.n, r.k) for r in reports}
    if len(dims) > 1:
        raise ValueError(f"reports mix problem sizes: {sorted(dims)}")
    rows = []
    for r in reports:
        rows.append({
            "flavor": r.flavor,
            "total_cycles": r.total_cycles,
            "utilization": r.utilization,
            "achieved_gflops": r.achieved_gflops,
            "cluster_area": r.cluster_area,
            "gflops_per_area": r.gflops_per_area,
            "utilization_vs_baseline_pct":
                (r.utilization - base.utilization) / base.utilization * 100.0,
            "speedup_vs_baseline": base.total_cycles / r.total_cycles,
            "area_vs_baseline": r.cluster_area / base.cluster_area,
            "perf_per_area_vs_baseline":
                r.gflops_per_area / base.gflops_per_area,
        })
    return rows


COMPARISON_COLUMNS = (
    "flavor", "total_cycles", "utilization", "achieved_gflops",
    "cluster_area", "gflops_per_area", "utilization_vs_baseline_pct",
    "speedup_vs_baseline", "area_vs_baseline", "perf_per_area_vs_baseline",
)
