"""Shared fixtures.

The session-scoped ``flavor_trio`` fixture runs the canned three-flavor
comparison experiment once (256^3 matmul on the shipped configs) and hands
the counters to every test that needs cluster-scale numbers; the big
instruction streams are dropped as soon as each run finishes.
"""

import gc
import time
from pathlib import Path

import pytest

import poolsim as ps
from poolsim.metrics import build_report

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
TRIO_DIMS = (256, 256, 256)
TRIO_FLAVORS = ("baseline", "systolic", "vectorial")


@pytest.fixture(scope="session")
def flavor_trio():
    results = {}
    for name in TRIO_FLAVORS:
        cfg = ps.validate_config(ps.load_config(CONFIG_DIR / f"{name}.cfg"))
        t0 = time.perf_counter()
        program = ps.generate_matmul(cfg, *TRIO_DIMS)
        counters = ps.run(cfg, program)
        elapsed = time.perf_counter() - t0
        results[name] = {
            "config": cfg,
            "counters": counters,
            "report": build_report(cfg, counters),
            "loads_per_core": program.loads_per_core(),
            "grid": program.meta.params.get("grid"),
            "elapsed_s": elapsed,
        }
        del program
        gc.collect()
    return results
