"""Report math: utilization, throughput, fractions, and flavor comparison."""

import pytest

import poolsim as ps
from poolsim.metrics import (COMPARISON_COLUMNS, REPORT_COLUMNS, SimReport,
                             build_report, compare_flavors)


def _cfg(flavor="baseline", **over):
    raw = {"flavor": flavor, "tiles_per_group": 1, "groups": 1}
    raw.update(over)
    return ps.validate_config(ps.build_config(raw))


def _report(flavor="baseline", dims=(8, 8, 8), **params):
    cfg = _cfg(flavor)
    counters = ps.run(cfg, ps.generate_matmul(cfg, *dims, **params))
    return cfg, counters, build_report(cfg, counters)


def test_throughput_is_utilization_times_peak():
    cfg, counters, rep = _report()
    assert rep.utilization == pytest.approx(
        counters.fma_slots_total / (cfg.compute_units * counters.total_cycles))
    assert rep.achieved_gflops == pytest.approx(rep.utilization
                                                * rep.peak_gflops)
    assert 0.0 < rep.utilization <= 1.0


def test_runtime_follows_clock():
    cfg, counters, rep = _report()
    assert rep.runtime_us == pytest.approx(
        counters.total_cycles / cfg.frequency_hz * 1e6)
    # half the clock, double the runtime
    slow = _cfg(frequency_hz=cfg.frequency_hz / 2)
    rep2 = build_report(slow, counters)
    assert rep2.runtime_us == pytest.approx(2 * rep.runtime_us)
    assert rep2.peak_gflops == pytest.approx(rep.peak_gflops / 2)


def test_cycle_fractions_sum_to_one():
    for flavor, dims, params in [("baseline", (8, 8, 8), {}),
                                 ("systolic", (8, 8, 8), {}),
                                 ("vectorial", (4, 64, 8), {"vl": 64})]:
        _, _, rep = _report(flavor, dims, **params)
        total = (rep.busy_fraction + rep.idle_fraction
                 + sum(rep.stall_fractions.values()))
        assert total == pytest.approx(1.0), flavor


def test_row_matches_columns():
    _, _, rep = _report()
    row = rep.to_row()
    assert len(row) == len(REPORT_COLUMNS)
    d = rep.to_dict()
    assert d["flavor"] == "baseline"
    assert d["m"] == 8 and d["k"] == 8
    assert d["partial"] == 0
    assert set(REPORT_COLUMNS) <= set(d)
    assert d["params"] == {"unroll": 4, "block": "4x4", "grid": "2x2"}


def test_area_normalized_throughput():
    _, _, rep = _report()
    assert rep.gflops_per_area == pytest.approx(rep.achieved_gflops
                                                / rep.cluster_area)


def _synthetic(flavor, cycles, utilization, area):
    return SimReport(
        flavor=flavor, program="synthetic", m=8, n=8, k=8,
        total_cores=4, compute_units=4, total_cycles=cycles,
        runtime_us=cycles / 500e6 * 1e6, fma_slots=0,
        utilization=utilization, peak_gflops=4.0,
        achieved_gflops=utilization * 4.0,
        busy_fraction=utilization, idle_fraction=1 - utilization,
        stall_fractions={}, mem_reads=0, mem_writes=0, avg_grant_wait=0.0,
        tile_area=area, cluster_area=area,
        gflops_per_area=utilization * 4.0 / area)


def test_compare_flavors_math():
    base = _synthetic("baseline", cycles=1000, utilization=0.50, area=1.00)
    syst = _synthetic("systolic", cycles=950, utilization=0.55, area=1.05)
    rows = compare_flavors([base, syst])
    by_flavor = {r["flavor"]: r for r in rows}
    assert by_flavor["baseline"]["speedup_vs_baseline"] == pytest.approx(1.0)
    assert by_flavor["systolic"]["utilization_vs_baseline_pct"] == (
        pytest.approx(10.0))
    assert by_flavor["systolic"]["speedup_vs_baseline"] == (
        pytest.approx(1000 / 950))
    assert by_flavor["systolic"]["area_vs_baseline"] == pytest.approx(1.05)
    for row in rows:
        assert set(COMPARISON_COLUMNS) <= set(row)


def test_compare_flavors_requires_baseline():
    only = _synthetic("systolic", 950, 0.55, 1.05)
    with pytest.raises(ValueError) as exc:
        compare_flavors([only])
    assert "baseline" in str(exc.value)


def test_compare_flavors_rejects_mixed_sizes():
    a = _synthetic("baseline", 1000, 0.5, 1.0)
    b = _synthetic("systolic", 950, 0.55, 1.05)
    b.m = 16
    with pytest.raises(ValueError) as exc:
        compare_flavors([a, b])
    assert "sizes" in str(exc.value)
