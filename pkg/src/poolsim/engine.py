"""Cycle-driven cluster engine.

Every simulated cycle advances through a fixed phase order, which is what
makes runs bit-reproducible regardless of host or hash seed:

1. deliver memory responses and vector completions that land this cycle,
2. let each core attempt to issue, in ascending core-id order,
3. arbitrate one grant per bank (round-robin among waiting cores),
4. advance the vector units (arithmetic burst retire, element traffic),
5. settle end-of-cycle bookkeeping (barrier release, watchdog, counters).

A response delivered in phase 1 of cycle C unblocks an issue in phase 2 of
the same cycle C; a request issued in phase 2 can win arbitration in phase 3
of that cycle. Cycle numbering starts at 1: the first instruction of a
program issues at cycle 1, and a run's ``total_cycles`` is the cycle in
which the final barrier releases.

The engine never invents work: programs come from the generators in
``kernel`` or from the text format, and a program/config mismatch (wrong
core count, out-of-range address, vector ops on a scalar flavor, ...) is
rejected up front with ``ProgramConfigMismatch`` rather than half-simulated.

Runs that cannot finish raise ``DeadlockDetected`` (no forward progress for
``watchdog`` consecutive cycles; the exception carries a wait graph naming
the queues and cores involved) or ``CycleLimitExceeded``. Both carry the
partial counters so a report can still be produced, flagged as aborted.
"""

import itertools
from dataclasses import dataclass, field

from .core import (CORE_AT_BARRIER, CORE_DONE, CORE_RUNNING, STEP_BARRIER,
                   STEP_ISSUED, TOKEN_LOAD, TOKEN_STORE, TOKEN_VLOAD_ELEM,
                   CoreState, QueueState, StallReason, VectorUnit, step_core)
from .kernel import (MNEMONICS, KernelProgram, Opcode, generate_matmul)
from .memsys import MemorySystem
from .topology import (ClusterConfig, Flavor, ValidatedConfig, build_config,
                       tile_of_core, tile_to_tile_latency, validate_config)

DEFAULT_MAX_CYCLES = 50_000_000
DEFAULT_WATCHDOG = 10_000

_BARRIER_STALL = int(StallReason.Barrier)
_OP_BARRIER = int(Opcode.Barrier)
_OP_QPUSH = int(Opcode.QPush)
_OP_QPOP = int(Opcode.QPop)


class ProgramConfigMismatch(ValueError):
    """Program and config disagree; carries the full list of problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("program does not fit configuration:\n  "
                         + "\n  ".join(self.errors))


class SimulationError(RuntimeError):
    """A run aborted; ``counters`` holds the partial measurements."""

    def __init__(self, message, counters=None):
        super().__init__(message)
        self.counters = counters


class DeadlockDetected(SimulationError):
    """No core made progress for a full watchdog window."""


class CycleLimitExceeded(SimulationError):
    """The run passed ``max_cycles`` without reaching the final barrier."""


@dataclass
class CoreCounters:
    """Cycle accounting for one core: busy + stalls + idle == total_cycles."""

    core_id: int
    busy: int
    idle: int
    stalls: list          # cycles lost per StallReason value
    fma_slots: int        # multiply-accumulate slots this core retired
    op_issued: list       # instructions issued per Opcode value

    @property
    def stall_cycles(self) -> int:
        return sum(self.stalls)

    def to_dict(self) -> dict:
        return {
            "core": self.core_id,
            "busy": self.busy,
            "idle": self.idle,
            "stalls": {r.name: self.stalls[r] for r in StallReason
                       if r is not StallReason.NoStall},
            "fma_slots": self.fma_slots,
            "ops": {MNEMONICS[Opcode(i)]: n
                    for i, n in enumerate(self.op_issued) if n},
        }


@dataclass
class QueueCounters:
    queue_id: int
    producer: int
    consumer: int
    pushes: int
    pops: int

    @property
    def leftover(self) -> int:
        return self.pushes - self.pops

    def to_dict(self) -> dict:
        return {"queue": self.queue_id, "producer": self.producer,
                "consumer": self.consumer, "pushes": self.pushes,
                "pops": self.pops}


@dataclass
class RawCounters:
    """Everything a run measured, before any rate/utilization math."""

    total_cycles: int
    flavor: str
    total_cores: int
    compute_units: int
    cores: list                     # CoreCounters per core
    queues: list = field(default_factory=list)   # QueueCounters per queue
    fma_slots_total: int = 0
    mem_reads: int = 0
    mem_writes: int = 0
    mem_grant_wait: int = 0         # cycles requests spent losing arbitration
    meta: dict = field(default_factory=dict)
    aborted: str = ""               # "", "deadlock", or "cycle-limit"
    wait_graph: str = ""
    queue_pop_order: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.aborted)

    def core_total(self, name: str) -> int:
        return sum(getattr(c, name) for c in self.cores)

    def stall_total(self, reason: StallReason) -> int:
        return sum(c.stalls[reason] for c in self.cores)

    def verify_accounting(self):
        """Check busy + stalls + idle == total_cycles on every core."""
        for c in self.cores:
            total = c.busy + c.idle + sum(c.stalls)
            if total != self.total_cycles:
                raise ValueError(
                    f"core {c.core_id} accounts for {total} cycles, "
                    f"run lasted {self.total_cycles}")

    def to_dict(self) -> dict:
        out = {
            "total_cycles": self.total_cycles,
            "flavor": self.flavor,
            "total_cores": self.total_cores,
            "compute_units": self.compute_units,
            "fma_slots_total": self.fma_slots_total,
            "mem_reads": self.mem_reads,
            "mem_writes": self.mem_writes,
            "mem_grant_wait": self.mem_grant_wait,
            "meta": dict(self.meta),
            "aborted": self.aborted,
            "cores": [c.to_dict() for c in self.cores],
            "queues": [q.to_dict() for q in self.queues],
        }
        if self.wait_graph:
            out["wait_graph"] = self.wait_graph
        return out


# -- program/config validation -------------------------------------------------

def check_program(cfg: ClusterConfig, program: KernelProgram) -> list:
    """Return every way *program* fails to fit *cfg* (empty list if it fits)."""
    errs = []
    ncores = cfg.total_cores
    have = set(program.streams)
    want = set(range(ncores))
    if have != want:
        missing = sorted(want - have)
        extra = sorted(have - want)
        if missing:
            errs.append(f"no instruction stream for cores {missing[:8]}"
                        + ("..." if len(missing) > 8 else ""))
        if extra:
            errs.append(f"streams for cores outside the cluster: {extra[:8]}"
                        + ("..." if len(extra) > 8 else ""))

    flavor = cfg.flavor
    queue_ids = {}
    for edge in program.queues:
        if edge.queue_id in queue_ids:
            errs.append(f"queue id {edge.queue_id} defined twice")
        queue_ids[edge.queue_id] = edge
        if not (0 <= edge.producer < ncores and 0 <= edge.consumer < ncores):
            errs.append(f"queue {edge.queue_id} endpoints "
                        f"({edge.producer} -> {edge.consumer}) outside cluster")
        elif edge.producer == edge.consumer:
            errs.append(f"queue {edge.queue_id} loops back to core "
                        f"{edge.producer}")
    if program.queues and flavor is not Flavor.Systolic:
        errs.append(f"streaming queues defined but flavor is {flavor.value}")
    if queue_ids and sorted(queue_ids) != list(range(len(queue_ids))):
        errs.append("queue ids are not dense from 0")

    spm = cfg.spm_words
    for core in sorted(have & want):
        stream = program.streams[core]
        if len(stream) == 0:
            errs.append(f"core {core} has an empty stream")
            continue
        if stream.raw[-6] != _OP_BARRIER:
            errs.append(f"core {core} stream does not end with a barrier")
        if stream.max_mem_end > spm:
            errs.append(f"core {core} touches address "
                        f"{stream.max_mem_end - 1}, scratchpad has {spm} words")
        if stream.max_vlen > cfg.max_vector_length:
            errs.append(f"core {core} uses vector length {stream.max_vlen}, "
                        f"config allows {cfg.max_vector_length}")
        counts = stream.op_counts
        has_vector = (counts[Opcode.VLoad] or counts[Opcode.VStore]
                      or counts[Opcode.VFMA])
        if has_vector and flavor is not Flavor.Vectorial:
            errs.append(f"core {core} issues vector ops but flavor is "
                        f"{flavor.value}")
        has_queue = counts[Opcode.QPush] or counts[Opcode.QPop]
        if has_queue and flavor is not Flavor.Systolic:
            errs.append(f"core {core} issues queue ops but flavor is "
                        f"{flavor.value}")
        for qid, (pushes, pops) in stream.queue_use.items():
            edge = queue_ids.get(qid)
            if edge is None:
                errs.append(f"core {core} references undefined queue {qid}")
                continue
            if pushes and edge.producer != core:
                errs.append(f"core {core} pushes to queue {qid} owned by "
                            f"producer core {edge.producer}")
            if pops and edge.consumer != core:
                errs.append(f"core {core} pops from queue {qid} owned by "
                            f"consumer core {edge.consumer}")
    return errs


def _wait_graph(cores, queues) -> str:
    """Describe who is waiting on what; used by deadlock diagnostics."""
    lines = []
    starved = set()
    clogged = set()
    for core in cores:
        if core.state == CORE_AT_BARRIER:
            lines.append(f"core {core.core_id}: waiting at barrier")
            continue
        if core.state == CORE_DONE:
            lines.append(f"core {core.core_id}: finished")
            continue
        instr = core.current_instruction()
        if instr is None:
            lines.append(f"core {core.core_id}: stream exhausted")
        elif instr.opcode is Opcode.QPop:
            q = queues[instr.queue_id]
            lines.append(
                f"core {core.core_id}: pop from queue {q.queue_id} "
                f"(occupancy {q.occupancy}/{q.capacity}, producer core "
                f"{q.producer})")
            if q.occupancy == 0:
                starved.add(q.queue_id)
        elif instr.opcode is Opcode.QPush:
            q = queues[instr.queue_id]
            lines.append(
                f"core {core.core_id}: push to queue {q.queue_id} "
                f"(occupancy {q.occupancy}/{q.capacity}, consumer core "
                f"{q.consumer})")
            if q.occupancy >= q.capacity:
                clogged.add(q.queue_id)
        else:
            lines.append(
                f"core {core.core_id}: stalled on {MNEMONICS[instr.opcode]} "
                f"(pending register mask {core.pending:#x})")
    if starved:
        lines.append("starved queues: "
                     + ", ".join(str(q) for q in sorted(starved)))
    if clogged:
        lines.append("full queues: "
                     + ", ".join(str(q) for q in sorted(clogged)))
    return "\n".join(lines)


# -- the engine -----------------------------------------------------------------

def run(cfg: ClusterConfig, program: KernelProgram, *,
        max_cycles: int = DEFAULT_MAX_CYCLES,
        watchdog: int = DEFAULT_WATCHDOG,
        trace=None, record_queue_pops: bool = False) -> RawCounters:
    """Simulate *program* on *cfg* to the final barrier; return the counters.

    ``trace`` is an optional writable text handle receiving one CSV row per
    granted memory request. ``record_queue_pops`` keeps the pop order of
    every queue in the result (costs memory; meant for tests).
    """
    if not isinstance(cfg, ValidatedConfig):
        cfg = validate_config(cfg)
    errors = check_program(cfg, program)
    if errors:
        raise ProgramConfigMismatch(errors)

    ncores = cfg.total_cores
    vectorial = cfg.flavor is Flavor.Vectorial
    cores = []
    vus = []
    for cid in range(ncores):
        vu = None
        if vectorial:
            vu = VectorUnit(cid, cfg.fpus_per_vector_unit)
            vus.append(vu)
        cores.append(CoreState(cid, program.streams[cid].raw,
                               cfg.max_outstanding_loads, vu))

    queues = [None] * len(program.queues)
    for edge in program.queues:
        home = tile_of_core(cfg, edge.consumer)
        latency = tile_to_tile_latency(cfg, tile_of_core(cfg, edge.producer),
                                       home)
        q = QueueState(edge.queue_id, edge.producer, edge.consumer,
                       cfg.queue_capacity, latency, home)
        if record_queue_pops:
            q.pop_log = []
        queues[edge.queue_id] = q

    mem = MemorySystem(cfg, trace)
    vu_due = {}
    cycle = 0
    done_count = 0
    at_barrier = 0
    last_progress = 0

    def snapshot(total_cycles, aborted="", wait_graph=""):
        counters = RawCounters(
            total_cycles=total_cycles,
            flavor=cfg.flavor.value,
            total_cores=ncores,
            compute_units=cfg.compute_units,
            cores=[CoreCounters(c.core_id, c.busy, c.idle, list(c.stalls),
                                c.fma_slots, list(c.op_issued))
                   for c in cores],
            queues=[QueueCounters(q.queue_id, q.producer, q.consumer,
                                  q.pushes, q.pops) for q in queues],
            fma_slots_total=sum(c.fma_slots for c in cores),
            mem_reads=mem.counters.requests[0],
            mem_writes=mem.counters.requests[1],
            mem_grant_wait=mem.counters.grant_wait_cycles,
            meta={"program": program.meta.name, "m": program.meta.m,
                  "n": program.meta.n, "k": program.meta.k,
                  "params": dict(program.meta.params),
                  "flavor": cfg.flavor.value},
            aborted=aborted,
            wait_graph=wait_graph,
        )
        if record_queue_pops:
            counters.queue_pop_order = {q.queue_id: list(q.pop_log)
                                        for q in queues}
        counters.verify_accounting()
        return counters

    while done_count < ncores:
        cycle += 1
        if cycle > max_cycles:
            raise CycleLimitExceeded(
                f"no final barrier within {max_cycles} cycles",
                snapshot(cycle - 1, aborted="cycle-limit"))
        progress = False

        # phase 1: responses and vector completions land
        deliveries = mem.pop_deliveries(cycle)
        if deliveries:
            progress = True
            for token in deliveries:
                kind = token[0]
                if kind == TOKEN_LOAD:
                    core = token[1]
                    core.pending &= ~token[2]
                    core.outstanding_loads -= 1
                elif kind == TOKEN_STORE:
                    token[1].outstanding_stores -= 1
                elif kind == TOKEN_VLOAD_ELEM:
                    rec = token[1]
                    rec[2] -= 1
                    if rec[2] == 0:
                        core = rec[0]
                        core.pending &= ~rec[1]
                        core.outstanding_loads -= 1
                else:
                    token[1].pending_store_elems -= 1
        completions = vu_due.pop(cycle, None)
        if completions:
            progress = True
            for cid, bit, vlen in completions:
                core = cores[cid]
                core.pending &= ~bit
                core.fma_slots += vlen

        # phase 2: issue, strictly in core-id order
        for core in cores:
            state = core.state
            if state == CORE_RUNNING:
                result = step_core(core, cycle, mem, queues)
                if result == STEP_ISSUED:
                    progress = True
                elif result == STEP_BARRIER:
                    core.stalls[_BARRIER_STALL] += 1
                    core.op_issued[_OP_BARRIER] += 1
                    core.state = CORE_AT_BARRIER
                    at_barrier += 1
                    progress = True
            elif state == CORE_AT_BARRIER:
                core.stalls[_BARRIER_STALL] += 1
            else:
                core.idle += 1

        # barrier release: all cores arrived, everyone resumes next cycle
        if at_barrier == ncores:
            at_barrier = 0
            progress = True
            for core in cores:
                core.state = CORE_RUNNING
                core.advance()
                if core.state == CORE_DONE:
                    done_count += 1

        # phase 3: banks pick winners
        if mem.arbitrate(cycle):
            progress = True

        # phase 4: vector units advance
        for vu in vus:
            if vu.step(cycle, mem, vu_due):
                progress = True

        # phase 5: starvation watchdog
        if progress:
            last_progress = cycle
        elif cycle - last_progress >= watchdog:
            graph = _wait_graph(cores, queues)
            raise DeadlockDetected(
                f"no forward progress for {watchdog} cycles "
                f"(cycle {cycle}):\n{graph}",
                snapshot(cycle, aborted="deadlock", wait_graph=graph))

    return snapshot(cycle)


# -- parameter sweeps -------------------------------------------------------------

# Axis names routed to the kernel generators rather than the config.
KERNEL_AXES = ("m", "n", "k", "unroll", "vl", "rows", "cols")


@dataclass
class SweepPoint:
    """One sweep sample: the axis values, the config, and the raw counters."""

    point: dict
    config: ValidatedConfig
    counters: RawCounters


def run_sweep(base_config: dict, axes: dict, *, dims=(16, 16, 16),
              kernel_params: dict = None,
              max_cycles: int = DEFAULT_MAX_CYCLES,
              watchdog: int = DEFAULT_WATCHDOG) -> list:
    """Run a matmul at every point of the cartesian product of *axes*.

    *base_config* is a raw key/value mapping (as loaded from a config file);
    axis names matching config fields override it per point, names in
    ``KERNEL_AXES`` go to the generator instead. Points execute sequentially
    in product order, so results are deterministic and memory stays flat.
    """
    from .topology import _CONFIG_FIELDS

    for name in axes:
        if name not in _CONFIG_FIELDS and name not in KERNEL_AXES:
            raise ValueError(f"unknown sweep axis {name!r}")
    names = list(axes)
    results = []
    for combo in itertools.product(*(axes[n] for n in names)):
        point = dict(zip(names, combo))
        raw = dict(base_config)
        params = dict(kernel_params or {})
        m, n, k = dims
        for name, value in point.items():
            if name in ("m", "n", "k"):
                if name == "m":
                    m = value
                elif name == "n":
                    n = value
                else:
                    k = value
            elif name in KERNEL_AXES:
                params[name] = value
            else:
                raw[name] = value
        cfg = validate_config(build_config(raw))
        program = generate_matmul(cfg, m, n, k, **params)
        counters = run(cfg, program, max_cycles=max_cycles, watchdog=watchdog)
        results.append(SweepPoint(point=point, config=cfg, counters=counters))
    return results
