"""Core-side execution model: issue rules, stall accounting, queues, vector units.

Each core is a single-issue in-order engine. Per cycle it looks at exactly one
instruction (the one at its program counter) and either issues it or records
one stall reason. Register readiness is tracked as a pending bitmask: loads
and vector operations mark their destination pending at issue and the engine
clears the bit when the response (or vector completion) is delivered. An
instruction stalls while any of its sources *or its destination* is pending;
including the destination keeps writeback ordering trivially correct and
paces a scalar core that feeds a vector unit without extra machinery.

Queue pops are combinational: a pop that sees a visible element issues and
produces its destination in the same cycle, so the popped register is never
marked pending. Pushes are fire-and-forget once the queue has room.

The vector unit attached to a tile has two independent pipes: the arithmetic
pipe retires one multiply-accumulate burst at a time (``ceil(vlen / fpus)``
cycles each) and the load/store pipe walks element addresses in order,
submitting at most ``fpus`` element requests to the memory system per cycle.
Keeping the pipes separate lets element traffic overlap arithmetic, which is
what makes long-vector blocking profitable.
"""

from collections import deque
from enum import IntEnum

from .kernel import Instruction, Opcode

# step_core return codes, consumed by the engine scheduler.
STEP_STALLED = 0
STEP_ISSUED = 1
STEP_BARRIER = 2

# Core scheduling states.
CORE_RUNNING = 0
CORE_AT_BARRIER = 1
CORE_DONE = 2

# Response token kinds (first element of every delivery token).
TOKEN_LOAD = 0
TOKEN_STORE = 1
TOKEN_VLOAD_ELEM = 2
TOKEN_VSTORE_ELEM = 3


class StallReason(IntEnum):
    """Why a core failed to issue in a given cycle.

    Every simulated cycle of every core lands in exactly one bucket:
    busy (an instruction issued), idle (program finished), or one of the
    stall reasons below.
    """

    NoStall = 0
    RawHazard = 1       # a source or destination register is still pending
    ScoreboardFull = 2  # too many loads in flight
    QueueFull = 3       # push blocked on a queue at capacity
    QueueEmpty = 4      # pop blocked on a queue with no visible element
    Barrier = 5         # waiting at (or draining toward) a barrier


class QueueState:
    """Runtime state of one single-producer single-consumer queue.

    Capacity counts both in-flight and visible elements, so a producer can
    never overrun the buffer no matter how the transit latency lines up.
    Elements become visible to the consumer ``latency`` cycles after the
    push; the latency is the network distance from the producer's tile to
    the queue's home tile, which sits next to the consumer.
    """

    __slots__ = ("queue_id", "producer", "consumer", "capacity", "latency",
                 "home_tile", "fifo", "occupancy", "pushes", "pops", "pop_log")

    def __init__(self, queue_id: int, producer: int, consumer: int,
                 capacity: int, latency: int, home_tile: int):
        self.queue_id = queue_id
        self.producer = producer
        self.consumer = consumer
        self.capacity = capacity
        self.latency = latency
        self.home_tile = home_tile
        self.fifo = deque()   # (visible_cycle, serial) in push order
        self.occupancy = 0    # in-flight + visible, bounded by capacity
        self.pushes = 0
        self.pops = 0
        self.pop_log = None   # set to a list to record popped serials

    def push(self, cycle: int) -> int:
        """Record a push issued this cycle; returns the element serial."""
        serial = self.pushes
        self.fifo.append((cycle + self.latency, serial))
        self.occupancy += 1
        self.pushes += 1
        return serial

    def can_pop(self, cycle: int) -> bool:
        fifo = self.fifo
        return bool(fifo) and fifo[0][0] <= cycle

    def pop(self) -> int:
        """Remove the head element; returns its serial for order checks."""
        serial = self.fifo.popleft()[1]
        self.occupancy -= 1
        self.pops += 1
        if self.pop_log is not None:
            self.pop_log.append(serial)
        return serial


class VectorUnit:
    """Shared per-tile vector engine with decoupled arithmetic and memory pipes.

    Arithmetic bursts execute strictly in order on ``fpus`` lanes. Memory
    operations also execute in order relative to each other, but the two
    pipes run independently; ordering between them is enforced by the
    issuing core through register pending bits.
    """

    __slots__ = ("core_id", "fpus", "busy_until", "fma_queue", "mem_queue",
                 "active_mem", "pending_store_elems", "busy_cycles")

    def __init__(self, core_id: int, fpus: int):
        self.core_id = core_id          # owning (issuing) core
        self.fpus = fpus
        self.busy_until = 0             # arithmetic pipe free from this cycle on
        self.fma_queue = deque()        # (dst_bit, vlen)
        self.mem_queue = deque()        # (is_load, base_addr, vlen, rec)
        self.active_mem = None          # [is_load, base_addr, vlen, rec, issued]
        self.pending_store_elems = 0    # store elements not yet landed in a bank
        self.busy_cycles = 0            # cycles the arithmetic pipe was occupied

    def step(self, cycle: int, mem, vu_due: dict) -> bool:
        """Advance both pipes one cycle; returns True if anything moved."""
        moved = False

        if self.busy_until > cycle:
            # An occupied arithmetic pipe counts as forward progress so a
            # long burst cannot trip the engine's starvation watchdog.
            self.busy_cycles += 1
            moved = True
        elif self.fma_queue:
            dst_bit, vlen = self.fma_queue.popleft()
            duration = -(-vlen // self.fpus)
            done = cycle + duration
            self.busy_until = done
            self.busy_cycles += 1
            due = vu_due.get(done)
            if due is None:
                due = vu_due[done] = []
            due.append((self.core_id, dst_bit, vlen))
            moved = True

        if self.active_mem is None and self.mem_queue:
            is_load, base, vlen, rec = self.mem_queue.popleft()
            self.active_mem = [is_load, base, vlen, rec, 0]
        active = self.active_mem
        if active is not None:
            is_load, base, vlen, rec, issued = active
            burst = self.fpus
            if vlen - issued < burst:
                burst = vlen - issued
            if is_load:
                token = (TOKEN_VLOAD_ELEM, rec)
                for elem in range(issued, issued + burst):
                    mem.submit(self.core_id, base + elem, 0, token, cycle)
            else:
                token = (TOKEN_VSTORE_ELEM, self)
                for elem in range(issued, issued + burst):
                    mem.submit(self.core_id, base + elem, 1, token, cycle)
            issued += burst
            if issued == vlen:
                self.active_mem = None
            else:
                active[4] = issued
            moved = True

        return moved

    def drained(self, cycle: int) -> bool:
        """True when no work is queued, running, or outstanding in memory."""
        return (not self.fma_queue and self.busy_until <= cycle
                and self.active_mem is None and not self.mem_queue
                and self.pending_store_elems == 0)


class CoreState:
    """Mutable per-core execution state plus the per-core counters."""

    __slots__ = ("core_id", "raw", "end", "pc6", "pending", "outstanding_loads",
                 "outstanding_stores", "max_outstanding", "state", "vu",
                 "busy", "idle", "stalls", "fma_slots", "op_issued")

    def __init__(self, core_id: int, raw, max_outstanding: int, vu=None):
        self.core_id = core_id
        self.raw = raw                  # packed stream, stride 6
        self.end = len(raw)
        self.pc6 = 0                    # byte-less: index of current opcode slot
        self.pending = 0                # bitmask of registers awaiting a writer
        self.outstanding_loads = 0
        self.outstanding_stores = 0
        self.max_outstanding = max_outstanding
        self.state = CORE_RUNNING
        self.vu = vu
        self.busy = 0
        self.idle = 0
        self.stalls = [0] * len(StallReason)
        self.fma_slots = 0              # multiply-accumulate slots retired
        self.op_issued = [0] * len(Opcode)

    def advance(self):
        """Move past the current instruction; flips to DONE at stream end."""
        self.pc6 += 6
        if self.pc6 >= self.end:
            self.state = CORE_DONE

    def current_instruction(self):
        """Decode the instruction at the program counter (debug/wait-graph)."""
        if self.pc6 >= self.end:
            return None
        base = self.pc6
        return Instruction.from_raw(*self.raw[base:base + 6])


_OP_FMA = int(Opcode.ComputeFMA)
_OP_ALU = int(Opcode.ComputeALU)
_OP_LOAD = int(Opcode.Load)
_OP_STORE = int(Opcode.Store)
_OP_QPUSH = int(Opcode.QPush)
_OP_QPOP = int(Opcode.QPop)
_OP_VLOAD = int(Opcode.VLoad)
_OP_VSTORE = int(Opcode.VStore)
_OP_VFMA = int(Opcode.VFMA)
_OP_BARRIER = int(Opcode.Barrier)
_OP_NOP = int(Opcode.Nop)

_RAW = int(StallReason.RawHazard)
_SB_FULL = int(StallReason.ScoreboardFull)
_Q_FULL = int(StallReason.QueueFull)
_Q_EMPTY = int(StallReason.QueueEmpty)
_BARRIER = int(StallReason.Barrier)


def step_core(core: CoreState, cycle: int, mem, queues) -> int:
    """Try to issue the next instruction of one core for this cycle.

    Returns STEP_ISSUED on issue, STEP_BARRIER when the core arrives at a
    barrier (the engine handles the rendezvous), and STEP_STALLED otherwise.
    Exactly one counter bucket on the core is incremented per call, so the
    per-core accounting identity busy + stalls + idle == cycles holds by
    construction. Hazards are checked before structural limits: a register
    conflict reports RawHazard even if, say, the scoreboard is also full.
    """
    raw = core.raw
    base = core.pc6
    op = raw[base]
    dst = raw[base + 1]

    # Hazard check: sources and destination must not be pending.
    mask = 0
    if dst >= 0:
        mask = 1 << dst
    s1 = raw[base + 2]
    if s1 >= 0:
        mask |= 1 << s1
    s2 = raw[base + 3]
    if s2 >= 0:
        mask |= 1 << s2
    if core.pending & mask:
        core.stalls[_RAW] += 1
        return STEP_STALLED

    if op == _OP_FMA:
        core.fma_slots += 1
    elif op == _OP_LOAD:
        if core.outstanding_loads >= core.max_outstanding:
            core.stalls[_SB_FULL] += 1
            return STEP_STALLED
        mem.submit(core.core_id, raw[base + 4], 0,
                   (TOKEN_LOAD, core, 1 << dst), cycle)
        core.pending |= 1 << dst
        core.outstanding_loads += 1
    elif op == _OP_STORE:
        mem.submit(core.core_id, raw[base + 4], 1, (TOKEN_STORE, core), cycle)
        core.outstanding_stores += 1
    elif op == _OP_QPUSH:
        queue = queues[raw[base + 4]]
        if queue.occupancy >= queue.capacity:
            core.stalls[_Q_FULL] += 1
            return STEP_STALLED
        queue.push(cycle)
        if mem.trace is not None:
            mem.trace_queue_event(core.core_id, queue.home_tile, cycle,
                                  cycle + queue.latency)
    elif op == _OP_QPOP:
        queue = queues[raw[base + 4]]
        if not queue.can_pop(cycle):
            core.stalls[_Q_EMPTY] += 1
            return STEP_STALLED
        queue.pop()
    elif op == _OP_VFMA:
        vu = core.vu
        vlen = raw[base + 5]
        vu.fma_queue.append((1 << dst, vlen))
        core.pending |= 1 << dst
    elif op == _OP_VLOAD:
        if core.outstanding_loads >= core.max_outstanding:
            core.stalls[_SB_FULL] += 1
            return STEP_STALLED
        vlen = raw[base + 5]
        # rec[2] counts element responses still in flight; the engine clears
        # the pending bit and frees the scoreboard slot when it hits zero.
        rec = [core, 1 << dst, vlen]
        core.vu.mem_queue.append((True, raw[base + 4], vlen, rec))
        core.pending |= 1 << dst
        core.outstanding_loads += 1
    elif op == _OP_VSTORE:
        vu = core.vu
        vlen = raw[base + 5]
        vu.mem_queue.append((False, raw[base + 4], vlen, None))
        vu.pending_store_elems += vlen
    elif op == _OP_BARRIER:
        # Arrival requires local memory traffic to settle: pending register
        # writers, un-landed stores, and the tile's vector unit must drain.
        # The arrival cycle itself is charged to the Barrier bucket by the
        # engine, which owns the rendezvous bookkeeping.
        if (core.pending or core.outstanding_stores
                or (core.vu is not None and not core.vu.drained(cycle))):
            core.stalls[_BARRIER] += 1
            return STEP_STALLED
        return STEP_BARRIER

    core.busy += 1
    core.op_issued[op] += 1
    core.advance()
    return STEP_ISSUED
