"""Unit tests for the per-core issue logic, queues, and vector units."""

from poolsim.core import (CoreState, QueueState, STEP_BARRIER, STEP_ISSUED,
                          STEP_STALLED, StallReason, TOKEN_VLOAD_ELEM,
                          VectorUnit, step_core)
from poolsim.kernel import Instruction, InstrStream, Opcode


class StubMem:
    """Collects submits; enough memory-system surface for step_core."""

    trace = None

    def __init__(self):
        self.submits = []

    def submit(self, core, addr, kind, token, cycle):
        self.submits.append((core, addr, kind, token, cycle))
        return len(self.submits) - 1


def _core(*instrs, max_outstanding=8, vu=None):
    stream = InstrStream()
    for instr in instrs:
        stream.append(instr)
    return CoreState(0, stream.raw, max_outstanding, vu=vu)


# -- hardware queues ------------------------------------------------------------

def test_queue_visibility_latency():
    q = QueueState(0, producer=0, consumer=1, capacity=4, latency=3,
                   home_tile=0)
    q.push(cycle=5)
    assert q.occupancy == 1
    assert not q.can_pop(5)
    assert not q.can_pop(7)
    assert q.can_pop(8)          # 5 + 3
    assert q.pop() == 0
    assert q.occupancy == 0 and q.pops == 1


def test_queue_serials_and_order():
    q = QueueState(0, 0, 1, capacity=8, latency=1, home_tile=0)
    q.pop_log = []
    serials = [q.push(c) for c in range(1, 5)]
    assert serials == [0, 1, 2, 3]
    while q.can_pop(99):
        q.pop()
    assert q.pop_log == [0, 1, 2, 3]


def test_queue_capacity_counts_in_flight():
    # capacity covers elements still travelling plus those visible
    q = QueueState(0, 0, 1, capacity=2, latency=5, home_tile=0)
    q.push(1)
    q.push(1)
    assert q.occupancy == 2       # neither is visible yet at cycle 1
    assert not q.can_pop(1)


# -- vector unit ---------------------------------------------------------------

def test_vfma_duration_rounds_up():
    vu = VectorUnit(0, fpus=4)
    vu.fma_queue.append((1 << 3, 5))      # 5 lanes / 4 fpus -> 2 cycles
    due = {}
    assert vu.step(1, StubMem(), due)
    assert vu.busy_until == 3
    assert due == {3: [(0, 1 << 3, 5)]}
    assert not vu.drained(2)
    assert vu.drained(3)


def test_vector_load_burst_pattern():
    vu = VectorUnit(0, fpus=4)
    rec = [None, 1 << 2, 10]
    vu.mem_queue.append((True, 100, 10, rec))
    mem = StubMem()
    counts = []
    for cycle in (1, 2, 3):
        before = len(mem.submits)
        vu.step(cycle, mem, {})
        counts.append(len(mem.submits) - before)
    assert counts == [4, 4, 2]            # 10 elements at 4 per cycle
    addrs = [s[1] for s in mem.submits]
    assert addrs == list(range(100, 110))
    kinds = {s[2] for s in mem.submits}
    assert kinds == {0}                    # reads
    token = mem.submits[0][3]
    assert token == (TOKEN_VLOAD_ELEM, rec)
    assert vu.drained(4)


def test_vector_store_tracks_unlanded_elements():
    vu = VectorUnit(0, fpus=4)
    vu.mem_queue.append((False, 0, 4, None))
    vu.pending_store_elems = 4
    mem = StubMem()
    vu.step(1, mem, {})
    assert [s[2] for s in mem.submits] == [1, 1, 1, 1]   # writes
    assert not vu.drained(2)              # elements not yet landed
    vu.pending_store_elems = 0            # the engine clears these on delivery
    assert vu.drained(2)


def test_busy_pipe_reports_progress():
    vu = VectorUnit(0, fpus=1)
    vu.fma_queue.append((1, 64))
    assert vu.step(1, StubMem(), {})
    assert vu.busy_until == 65
    for cycle in range(2, 10):
        assert vu.step(cycle, StubMem(), {})   # still "moving" while occupied


# -- scalar issue rules ----------------------------------------------------------

def test_raw_hazard_blocks_and_counts():
    core = _core(Instruction(Opcode.ComputeFMA, dst=1, srcs=(2, 3)),
                 Instruction(Opcode.Barrier))
    core.pending = 1 << 2
    assert step_core(core, 1, StubMem(), ()) == STEP_STALLED
    assert core.stalls[StallReason.RawHazard] == 1
    core.pending = 0
    assert step_core(core, 2, StubMem(), ()) == STEP_ISSUED
    assert core.fma_slots == 1
    assert core.op_issued[Opcode.ComputeFMA] == 1
    assert core.busy == 1


def test_waw_counts_as_hazard():
    # a pending destination register blocks re-issue even with clean sources
    core = _core(Instruction(Opcode.ComputeALU, dst=4),
                 Instruction(Opcode.Barrier))
    core.pending = 1 << 4
    assert step_core(core, 1, StubMem(), ()) == STEP_STALLED
    assert core.stalls[StallReason.RawHazard] == 1


def test_load_sets_pending_and_scoreboard():
    core = _core(Instruction(Opcode.Load, dst=5, addr=17),
                 Instruction(Opcode.Barrier), max_outstanding=1)
    mem = StubMem()
    assert step_core(core, 3, mem, ()) == STEP_ISSUED
    assert core.pending == 1 << 5
    assert core.outstanding_loads == 1
    (cid, addr, kind, token, cycle), = mem.submits
    assert (cid, addr, kind, cycle) == (0, 17, 0, 3)
    assert token[0] == 0 and token[2] == 1 << 5


def test_hazard_outranks_scoreboard_limit():
    core = _core(Instruction(Opcode.Load, dst=5, addr=0),
                 Instruction(Opcode.Barrier), max_outstanding=1)
    core.outstanding_loads = 1            # scoreboard full
    core.pending = 1 << 5                 # and the destination is pending
    assert step_core(core, 1, StubMem(), ()) == STEP_STALLED
    assert core.stalls[StallReason.RawHazard] == 1
    assert core.stalls[StallReason.ScoreboardFull] == 0
    core.pending = 0
    assert step_core(core, 2, StubMem(), ()) == STEP_STALLED
    assert core.stalls[StallReason.ScoreboardFull] == 1


def test_queue_full_and_empty_buckets():
    push = _core(Instruction(Opcode.QPush, queue_id=0),
                 Instruction(Opcode.Barrier))
    pop = _core(Instruction(Opcode.QPop, dst=1, queue_id=0),
                Instruction(Opcode.Barrier))
    q = QueueState(0, 0, 1, capacity=1, latency=1, home_tile=0)
    q.push(1)                              # fill it
    assert step_core(push, 1, StubMem(), (q,)) == STEP_STALLED
    assert push.stalls[StallReason.QueueFull] == 1

    empty = QueueState(1, 0, 1, capacity=1, latency=1, home_tile=0)
    assert step_core(pop, 1, StubMem(), (empty,)) == STEP_STALLED
    assert pop.stalls[StallReason.QueueEmpty] == 1
    # pops are combinational: the destination never turns pending
    empty.push(1)
    assert step_core(pop, 2, StubMem(), (empty,)) == STEP_ISSUED
    assert pop.pending == 0


def test_barrier_waits_for_drain():
    core = _core(Instruction(Opcode.Barrier))
    core.outstanding_stores = 1
    assert step_core(core, 1, StubMem(), ()) == STEP_STALLED
    assert core.stalls[StallReason.Barrier] == 1
    core.outstanding_stores = 0
    assert step_core(core, 2, StubMem(), ()) == STEP_BARRIER
    # arrival leaves the counters to the engine
    assert core.busy == 0
    assert core.op_issued[Opcode.Barrier] == 0


def test_barrier_waits_for_vector_unit():
    vu = VectorUnit(0, fpus=4)
    core = _core(Instruction(Opcode.Barrier), vu=vu)
    vu.fma_queue.append((1 << 1, 8))
    assert step_core(core, 1, StubMem(), ()) == STEP_STALLED
    vu.step(1, StubMem(), {})
    assert step_core(core, 2, StubMem(), ()) == STEP_STALLED   # pipe busy
    assert step_core(core, 3, StubMem(), ()) == STEP_BARRIER   # drained
