"""Timing-level kernel programs and matmul generators.

A kernel program is a set of per-core instruction streams over a small
abstract ISA that carries exactly the information the timing model
needs: which issue slots exist, which registers an instruction waits
on, which scratchpad word a memory operation touches, and which queue
a streaming operation uses.  Register *values* are not modeled; all
addresses are literals baked in by the generators.

Streams are stored packed (six ints per instruction in a flat array) so
that cluster-scale programs - hundreds of cores times ~1e5 instructions
each - stay within a few hundred MB and the simulator's issue loop can
index them without object overhead.  ``Instruction`` objects are
materialized on demand for inspection and serialization.

Matmul generators
-----------------
All three flavors compute C[M,N] = A[M,K] * B[K,N] with an
output-stationary register block per core and a shared operand layout
(A column-major at 0, B row-major after A, C row-major after B, all
word-interleaved across banks by the memory system).

* ``gen_matmul_baseline``  - every core loads its own operand strips
  each k-step (amortized over the register block) and accumulates into
  a private block of C.
* ``gen_matmul_systolic``  - cores form a 2D grid; the left column and
  top row load operand strips from the scratchpad, everyone forwards
  strips to the next grid neighbor through bounded queues, and interior
  cores issue no loads at all.
* ``gen_matmul_vectorial`` - one scalar core per tile streams vector
  operands into a multi-lane unit; double-buffered vector registers
  overlap the next k-step's loads with the current one's arithmetic.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, NamedTuple, Optional

from .topology import ClusterConfig, Flavor, NUM_REGISTERS

PROGRAM_FORMAT_VERSION = 1

# Instruction-level calibration constants (documented in the README):
# scalar loop overhead modeled as explicit ALU slots.
BLOCK_SETUP_ALU = 2        # address setup per register block
LOOP_OVERHEAD_ALU = 4      # induction, bound check, address bumps per group
DEFAULT_UNROLL = 4         # k-steps per unrolled group, baseline kernel
SYSTOLIC_MAX_K_BATCH = 8   # most k-steps carried per streamed queue element
SYSTOLIC_GROUP_BATCHES = 2 # streamed batches per systolic loop group
VECTOR_GROUP_KSTEPS = 4    # k-steps per vectorial loop group
REG_BLOCK = 4              # target register-block edge (output rows/cols)
STRIP_REGS = 8             # architectural registers per operand strip bank


class Opcode(IntEnum):
    ComputeFMA = 0
    ComputeALU = 1
    Load = 2
    Store = 3
    QPush = 4
    QPop = 5
    VLoad = 6
    VStore = 7
    VFMA = 8
    Barrier = 9
    Nop = 10


MNEMONICS = {
    Opcode.ComputeFMA: "fma",
    Opcode.ComputeALU: "alu",
    Opcode.Load: "load",
    Opcode.Store: "store",
    Opcode.QPush: "qpush",
    Opcode.QPop: "qpop",
    Opcode.VLoad: "vload",
    Opcode.VStore: "vstore",
    Opcode.VFMA: "vfma",
    Opcode.Barrier: "barrier",
    Opcode.Nop: "nop",
}
_OPCODE_OF = {v: k for k, v in MNEMONICS.items()}

# Packed stream layout: 6 ints per instruction, -1 marks an absent field.
STRIDE = 6  # [opcode, dst, src1, src2, aux, vlen]; aux = address or queue id

VECTOR_OPCODES = frozenset((Opcode.VLoad, Opcode.VStore, Opcode.VFMA))
QUEUE_OPCODES = frozenset((Opcode.QPush, Opcode.QPop))
MEMORY_OPCODES = frozenset((Opcode.Load, Opcode.Store, Opcode.VLoad,
                            Opcode.VStore))


@dataclass(frozen=True)
class Instruction:
    """One abstract-ISA instruction (unpacked view)."""

    opcode: Opcode
    dst: Optional[int] = None
    srcs: tuple = ()
    addr: Optional[int] = None
    queue_id: Optional[int] = None
    vlen: Optional[int] = None

    def __post_init__(self):
        for reg in (self.dst, *self.srcs):
            if reg is not None and not (0 <= reg < NUM_REGISTERS):
                raise ValueError(f"register id {reg} outside [0, {NUM_REGISTERS})")
        if len(self.srcs) > 2:
            raise ValueError("at most two source registers per instruction")
        if self.opcode in MEMORY_OPCODES and (self.addr is None or self.addr < 0):
            raise ValueError(f"{self.opcode.name} requires a non-negative address")
        if self.opcode in QUEUE_OPCODES and (self.queue_id is None or self.queue_id < 0):
            raise ValueError(f"{self.opcode.name} requires a queue id")
        if self.opcode in VECTOR_OPCODES and (self.vlen is None or self.vlen < 1):
            raise ValueError(f"{self.opcode.name} requires a vector length >= 1")
        if self.opcode in (Opcode.Load, Opcode.QPop, Opcode.VLoad) and self.dst is None:
            raise ValueError(f"{self.opcode.name} requires a destination register")
        if self.opcode is Opcode.ComputeFMA and (self.dst is None or len(self.srcs) != 2):
            raise ValueError("ComputeFMA requires a destination and two sources")
        if self.opcode is Opcode.VFMA and (self.dst is None or len(self.srcs) != 2):
            raise ValueError("VFMA requires a destination and two sources")
        if self.opcode in (Opcode.Store, Opcode.VStore) and len(self.srcs) != 1:
            raise ValueError(f"{self.opcode.name} requires exactly one source")

    def to_raw(self) -> tuple:
        s1 = self.srcs[0] if len(self.srcs) > 0 else -1
        s2 = self.srcs[1] if len(self.srcs) > 1 else -1
        aux = -1
        if self.addr is not None:
            aux = self.addr
        elif self.queue_id is not None:
            aux = self.queue_id
        dst = -1 if self.dst is None else self.dst
        vlen = -1 if self.vlen is None else self.vlen
        return (int(self.opcode), dst, s1, s2, aux, vlen)

    @staticmethod
    def from_raw(op: int, dst: int, s1: int, s2: int, aux: int, vlen: int
                 ) -> "Instruction":
        opcode = Opcode(op)
        srcs = tuple(s for s in (s1, s2) if s >= 0)
        return Instruction(
            opcode=opcode,
            dst=None if dst < 0 else dst,
            srcs=srcs,
            addr=aux if opcode in MEMORY_OPCODES else None,
            queue_id=aux if opcode in QUEUE_OPCODES else None,
            vlen=None if vlen < 0 else vlen,
        )


class InstrStream:
    """Packed per-core instruction sequence.

    Appending tracks per-opcode counts and FMA slot totals incrementally
    so cluster-scale mixes never require a rescan.
    """

    __slots__ = ("raw", "op_counts", "fma_slots", "max_mem_end", "max_vlen",
                 "queue_use")

    def __init__(self, instructions=None):
        self.raw = array("i")
        self.op_counts = [0] * len(Opcode)
        self.fma_slots = 0
        self.max_mem_end = 0   # one past the highest word this stream touches
        self.max_vlen = 0
        self.queue_use = {}    # queue id -> [pushes, pops]
        if instructions:
            for instr in instructions:
                self.append(instr)

    def append(self, instr: Instruction):
        self.append_raw(*instr.to_raw())

    def append_raw(self, op, dst=-1, s1=-1, s2=-1, aux=-1, vlen=-1):
        self.raw.extend((op, dst, s1, s2, aux, vlen))
        self.op_counts[op] += 1
        if op == Opcode.ComputeFMA:
            self.fma_slots += 1
        elif op == Opcode.VFMA:
            self.fma_slots += vlen
            if vlen > self.max_vlen:
                self.max_vlen = vlen
        elif op == Opcode.Load or op == Opcode.Store:
            if aux >= self.max_mem_end:
                self.max_mem_end = aux + 1
        elif op == Opcode.VLoad or op == Opcode.VStore:
            if aux + vlen > self.max_mem_end:
                self.max_mem_end = aux + vlen
            if vlen > self.max_vlen:
                self.max_vlen = vlen
        elif op == Opcode.QPush or op == Opcode.QPop:
            use = self.queue_use.get(aux)
            if use is None:
                use = self.queue_use[aux] = [0, 0]
            if op == Opcode.QPush:
                use[0] += 1
            else:
                use[1] += 1

    def __len__(self) -> int:
        return len(self.raw) // STRIDE

    def __getitem__(self, idx: int) -> Instruction:
        if idx < 0:
            idx += len(self)
        if not 0 <= idx < len(self):
            raise IndexError(idx)
        base = idx * STRIDE
        return Instruction.from_raw(*self.raw[base:base + STRIDE])

    def __iter__(self) -> Iterator[Instruction]:
        for idx in range(len(self)):
            yield self[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, InstrStream) and self.raw == other.raw

    def __repr__(self) -> str:
        return f"InstrStream({len(self)} instructions)"


class QueueEdge(NamedTuple):
    """Single-producer single-consumer streaming link between two cores."""

    queue_id: int
    producer: int
    consumer: int


@dataclass
class KernelMeta:
    """Provenance of a generated program (name, problem dims, knobs)."""

    name: str
    m: int = 0
    n: int = 0
    k: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class KernelProgram:
    """Per-core instruction streams plus the streaming-queue topology."""

    streams: dict            # core id -> InstrStream
    queues: tuple = ()       # QueueEdge entries, queue_id dense from 0
    meta: KernelMeta = field(default_factory=lambda: KernelMeta("anonymous"))

    @property
    def num_cores(self) -> int:
        return len(self.streams)

    def instruction_mix(self) -> dict:
        """Total count per opcode across all cores."""
        totals = [0] * len(Opcode)
        for stream in self.streams.values():
            for op, cnt in enumerate(stream.op_counts):
                totals[op] += cnt
        return {Opcode(op): cnt for op, cnt in enumerate(totals) if cnt}

    def fma_slots_total(self) -> int:
        return sum(s.fma_slots for s in self.streams.values())

    def total_instructions(self) -> int:
        return sum(len(s) for s in self.streams.values())

    def loads_per_core(self) -> dict:
        return {core: s.op_counts[Opcode.Load]
                for core, s in self.streams.items()}

    def __eq__(self, other) -> bool:
        return (isinstance(other, KernelProgram)
                and self.streams == other.streams
                and tuple(self.queues) == tuple(other.queues)
                and self.meta == other.meta)


class GeneratorError(ValueError):
    """Problem dimensions incompatible with the machine or the kernel."""


def queue_dependence_order(program: KernelProgram) -> list:
    """Topologically order queues by producer-side program position.

    Builds the dependence graph "queue a feeds queue b" (some core pops
    a before pushing b) and returns a topological order.  Raises
    GeneratorError on a cycle, which would deadlock once capacities are
    finite.
    """
    edges = {q.queue_id: set() for q in program.queues}
    for stream in program.streams.values():
        popped = set()
        raw = stream.raw
        for base in range(0, len(raw), STRIDE):
            op = raw[base]
            if op == Opcode.QPop:
                popped.add(raw[base + 4])
            elif op == Opcode.QPush:
                qid = raw[base + 4]
                for src_q in popped:
                    if src_q != qid:
                        edges.setdefault(src_q, set()).add(qid)
    indeg = {q: 0 for q in edges}
    for dsts in edges.values():
        for d in dsts:
            indeg[d] += 1
    ready = sorted(q for q, deg in indeg.items() if deg == 0)
    order = []
    while ready:
        q = ready.pop()
        order.append(q)
        for d in sorted(edges[q], reverse=True):
            indeg[d] -= 1
            if indeg[d] == 0:
                ready.append(d)
    if len(order) != len(edges):
        raise GeneratorError("queue dependence graph has a cycle")
    return order


# -- shared matmul plumbing ---------------------------------------------------


def core_grid(total_cores: int) -> tuple:
    """Near-square 2D factorization of the core count (rows <= cols)."""
    if total_cores < 1 or total_cores & (total_cores - 1):
        raise GeneratorError(f"core count {total_cores} is not a power of two")
    p = total_cores.bit_length() - 1
    return 1 << (p // 2), 1 << (p - p // 2)


@dataclass(frozen=True)
class MatmulLayout:
    """Scratchpad placement of the three operand matrices.

    A is stored column-major so a column strip a[i..i+s, k] is
    contiguous; B and C are row-major so row segments are contiguous.
    The word-interleaved bank mapping then spreads consecutive words of
    any strip over distinct banks.
    """

    m: int
    n: int
    k: int

    @property
    def a_base(self) -> int:
        return 0

    @property
    def b_base(self) -> int:
        return self.m * self.k

    @property
    def c_base(self) -> int:
        return self.m * self.k + self.k * self.n

    @property
    def words(self) -> int:
        return self.c_base + self.m * self.n

    def a_addr(self, i: int, kk: int) -> int:
        return self.a_base + kk * self.m + i

    def b_addr(self, kk: int, j: int) -> int:
        return self.b_base + kk * self.n + j

    def c_addr(self, i: int, j: int) -> int:
        return self.c_base + i * self.n + j


def _check_dims(cfg: ClusterConfig, m: int, n: int, k: int) -> MatmulLayout:
    if min(m, n, k) < 1:
        raise GeneratorError(f"matmul dims must be positive, got {m}x{n}x{k}")
    layout = MatmulLayout(m, n, k)
    if layout.words > cfg.spm_words:
        raise GeneratorError(
            f"operands need {layout.words} words but the scratchpad holds "
            f"{cfg.spm_words}; shrink the problem or grow the cluster")
    return layout


def _block_edge(region: int) -> int:
    """Largest block edge <= REG_BLOCK that divides the region edge."""
    return math.gcd(REG_BLOCK, region)


def _region(cfg, m, n, rows, cols):
    if m % rows:
        raise GeneratorError(f"M={m} not divisible by the {rows}-row core grid")
    if n % cols:
        raise GeneratorError(f"N={n} not divisible by the {cols}-column core grid")
    return m // rows, n // cols


# Register map shared by the scalar kernels: a 4x4 accumulator block in
# r0..r15 and operand strips above it.
_ACC = 0      # acc[i*bn + j]
_AREG = 16    # operand strip from A (up to 8 regs)
_BREG = 24    # operand strip from B (up to 8 regs)


def gen_matmul_baseline(cfg: ClusterConfig, m: int, n: int, k: int,
                        unroll: int = DEFAULT_UNROLL) -> KernelProgram:
    """Scalar matmul: each core loads operand strips and accumulates.

    Per k-step a core issues one load per register-block row of A and
    one per block column of B, then one FMA per accumulator; every
    *unroll* k-steps it pays LOOP_OVERHEAD_ALU slots of induction and
    branch overhead.  Operand loads hit shared words, so cores of the
    same grid row/column contend at the banks - latency the scoreboard
    only partially hides.  This mix is the model's calibration for the
    scalar flavor's sustained utilization.
    """
    layout = _check_dims(cfg, m, n, k)
    rows, cols = core_grid(cfg.total_cores)
    region_m, region_n = _region(cfg, m, n, rows, cols)
    if not 1 <= unroll <= k:
        raise GeneratorError(f"unroll={unroll} must lie in [1, K={k}]")
    if k % unroll:
        raise GeneratorError(f"K={k} not divisible by unroll={unroll}")
    bm, bn = _block_edge(region_m), _block_edge(region_n)

    streams = {}
    for r in range(rows):
        for c in range(cols):
            core = r * cols + c
            s = InstrStream()
            row0, col0 = r * region_m, c * region_n
            for bi in range(region_m // bm):
                for bj in range(region_n // bn):
                    for _ in range(BLOCK_SETUP_ALU):
                        s.append_raw(Opcode.ComputeALU)
                    base_i = row0 + bi * bm
                    base_j = col0 + bj * bn
                    for kg in range(k // unroll):
                        for ku in range(unroll):
                            kk = kg * unroll + ku
                            for i in range(bm):
                                s.append_raw(Opcode.Load, _AREG + i, -1, -1,
                                             layout.a_addr(base_i + i, kk))
                            for j in range(bn):
                                s.append_raw(Opcode.Load, _BREG + j, -1, -1,
                                             layout.b_addr(kk, base_j + j))
                            for i in range(bm):
                                for j in range(bn):
                                    s.append_raw(Opcode.ComputeFMA,
                                                 _ACC + i * bn + j,
                                                 _AREG + i, _BREG + j)
                        for _ in range(LOOP_OVERHEAD_ALU):
                            s.append_raw(Opcode.ComputeALU)
                    for i in range(bm):
                        for j in range(bn):
                            s.append_raw(Opcode.Store, -1, _ACC + i * bn + j, -1,
                                         layout.c_addr(base_i + i, base_j + j))
            s.append_raw(Opcode.Barrier)
            streams[core] = s

    meta = KernelMeta("matmul-baseline", m, n, k,
                      {"unroll": unroll, "grid": f"{rows}x{cols}",
                       "block": f"{bm}x{bn}"})
    return KernelProgram(streams=streams, meta=meta)


def _systolic_batch(k: int) -> int:
    """K-steps per streamed strip: largest divisor of k/2 up to the cap."""
    if k % SYSTOLIC_GROUP_BATCHES:
        raise GeneratorError(
            f"K={k} must be divisible by {SYSTOLIC_GROUP_BATCHES} "
            "(streamed loop group granularity)")
    half = k // SYSTOLIC_GROUP_BATCHES
    for b in range(min(SYSTOLIC_MAX_K_BATCH, half), 0, -1):
        if half % b == 0:
            return b
    return 1


def gen_matmul_systolic(cfg: ClusterConfig, m: int, n: int, k: int,
                        rows: int = 0, cols: int = 0) -> KernelProgram:
    """Grid matmul with queue-streamed operands.

    Cores form a rows x cols grid over the output.  The left column
    loads A strips, the top row loads B strips; strips then hop to the
    next neighbor through single-producer single-consumer queues, one
    queue per grid edge.  A queue element carries the operand strip for
    a whole batch of k-steps (the largest divisor of k/2 up to
    SYSTOLIC_MAX_K_BATCH), so forwarding costs one pop plus one push per
    batch instead of per word.  Interior cores issue no loads; strip
    words cycle through the fixed operand register banks, which is safe
    because issue is in order.
    """
    layout = _check_dims(cfg, m, n, k)
    if not rows and not cols:
        rows, cols = core_grid(cfg.total_cores)
    if rows * cols != cfg.total_cores:
        raise GeneratorError(
            f"grid {rows}x{cols} does not cover {cfg.total_cores} cores")
    region_m, region_n = _region(cfg, m, n, rows, cols)
    batch = _systolic_batch(k)
    bm, bn = _block_edge(region_m), _block_edge(region_n)

    # Queue ids: horizontal edges first (A strips flowing right), then
    # vertical edges (B strips flowing down).
    def h_q(r, c):  # core (r,c) -> (r,c+1)
        return r * (cols - 1) + c

    def v_q(r, c):  # core (r,c) -> (r+1,c)
        return rows * (cols - 1) + r * cols + c

    queues = []
    for r in range(rows):
        for c in range(cols - 1):
            queues.append(QueueEdge(h_q(r, c), r * cols + c, r * cols + c + 1))
    for r in range(rows - 1):
        for c in range(cols):
            queues.append(QueueEdge(v_q(r, c), r * cols + c, (r + 1) * cols + c))

    streams = {}
    for r in range(rows):
        for c in range(cols):
            core = r * cols + c
            s = InstrStream()
            row0, col0 = r * region_m, c * region_n
            for bi in range(region_m // bm):
                for bj in range(region_n // bn):
                    for _ in range(BLOCK_SETUP_ALU):
                        s.append_raw(Opcode.ComputeALU)
                    base_i = row0 + bi * bm
                    base_j = col0 + bj * bn
                    for kb in range(k // batch):
                        kk0 = kb * batch
                        # A strip in: load at the left edge, pop elsewhere.
                        if c == 0:
                            for t in range(batch):
                                for i in range(bm):
                                    s.append_raw(Opcode.Load,
                                                 _AREG + (t * bm + i) % STRIP_REGS,
                                                 -1, -1,
                                                 layout.a_addr(base_i + i, kk0 + t))
                        else:
                            s.append_raw(Opcode.QPop, _AREG, -1, -1, h_q(r, c - 1))
                        if c < cols - 1:
                            s.append_raw(Opcode.QPush, -1, -1, -1, h_q(r, c))
                        # B strip in: load at the top edge, pop elsewhere.
                        if r == 0:
                            for t in range(batch):
                                for j in range(bn):
                                    s.append_raw(Opcode.Load,
                                                 _BREG + (t * bn + j) % STRIP_REGS,
                                                 -1, -1,
                                                 layout.b_addr(kk0 + t, base_j + j))
                        else:
                            s.append_raw(Opcode.QPop, _BREG, -1, -1, v_q(r - 1, c))
                        if r < rows - 1:
                            s.append_raw(Opcode.QPush, -1, -1, -1, v_q(r, c))
                        for t in range(batch):
                            for i in range(bm):
                                for j in range(bn):
                                    s.append_raw(Opcode.ComputeFMA,
                                                 _ACC + i * bn + j,
                                                 _AREG + (t * bm + i) % STRIP_REGS,
                                                 _BREG + (t * bn + j) % STRIP_REGS)
                        if kb % SYSTOLIC_GROUP_BATCHES == SYSTOLIC_GROUP_BATCHES - 1:
                            for _ in range(LOOP_OVERHEAD_ALU):
                                s.append_raw(Opcode.ComputeALU)
                    for i in range(bm):
                        for j in range(bn):
                            s.append_raw(Opcode.Store, -1, _ACC + i * bn + j, -1,
                                         layout.c_addr(base_i + i, base_j + j))
            s.append_raw(Opcode.Barrier)
            streams[core] = s

    meta = KernelMeta("matmul-systolic", m, n, k,
                      {"grid": f"{rows}x{cols}", "block": f"{bm}x{bn}",
                       "k_batch": batch})
    return KernelProgram(streams=streams, queues=tuple(queues), meta=meta)


def gen_matmul_vectorial(cfg: ClusterConfig, m: int, n: int, k: int,
                         vl: int = 0) -> KernelProgram:
    """Vector matmul: per-tile scalar cores drive multi-lane units.

    Each core owns an output region of bm rows by bn vector columns.
    Per k-step it issues one short vector load for the A strip, bn
    vector loads for B row segments, and bm*bn vector FMAs; operand
    vector registers are double-buffered so the next k-step's loads
    overlap the current arithmetic.
    """
    layout = _check_dims(cfg, m, n, k)
    if not vl:
        vl = cfg.max_vector_length
    if not 1 <= vl <= cfg.max_vector_length:
        raise GeneratorError(
            f"vl={vl} must lie in [1, max_vector_length={cfg.max_vector_length}]")
    rows, cols = core_grid(cfg.total_cores)
    # Widen rows until a core's column range holds a full block of
    # vector columns, so the vector ops dominate the stream.
    while cols > 1 and n // cols < REG_BLOCK * vl:
        cols //= 2
        rows *= 2
    region_m, region_n = _region(cfg, m, n, rows, cols)
    if region_n % vl:
        raise GeneratorError(
            f"per-core column range {region_n} not divisible by vl={vl}")
    bm = _block_edge(region_m)
    bn = min(REG_BLOCK, region_n // vl)
    if (region_n // vl) % bn:
        raise GeneratorError(
            f"per-core vector columns {region_n // vl} not divisible by "
            f"block width {bn}")

    # Vector register map: accumulators v0..15, A strips v16/17 (double
    # buffered), B segments v18.. (bn per buffer, double buffered).
    acc = 0
    a_buf = (16, 17)
    b_buf = (18, 18 + bn)

    streams = {}
    for r in range(rows):
        for c in range(cols):
            core = r * cols + c
            s = InstrStream()
            row0, col0 = r * region_m, c * region_n

            def load_group(kk, buf):
                s.append_raw(Opcode.VLoad, a_buf[buf], -1, -1,
                             layout.a_addr(base_i, kk), bm)
                for j in range(bn):
                    s.append_raw(Opcode.VLoad, b_buf[buf] + j, -1, -1,
                                 layout.b_addr(kk, base_jv + j * vl), vl)

            for bi in range(region_m // bm):
                for bjv in range(region_n // (bn * vl)):
                    for _ in range(BLOCK_SETUP_ALU):
                        s.append_raw(Opcode.ComputeALU)
                    base_i = row0 + bi * bm
                    base_jv = col0 + bjv * bn * vl
                    load_group(0, 0)
                    for kk in range(k):
                        buf = kk % 2
                        if kk + 1 < k:
                            load_group(kk + 1, 1 - buf)
                        for i in range(bm):
                            for j in range(bn):
                                s.append_raw(Opcode.VFMA, acc + i * bn + j,
                                             a_buf[buf], b_buf[buf] + j, -1, vl)
                        if kk % VECTOR_GROUP_KSTEPS == VECTOR_GROUP_KSTEPS - 1:
                            for _ in range(LOOP_OVERHEAD_ALU):
                                s.append_raw(Opcode.ComputeALU)
                    for i in range(bm):
                        for j in range(bn):
                            s.append_raw(Opcode.VStore, -1, acc + i * bn + j, -1,
                                         layout.c_addr(base_i + i,
                                                       base_jv + j * vl), vl)
            s.append_raw(Opcode.Barrier)
            streams[core] = s

    meta = KernelMeta("matmul-vectorial", m, n, k,
                      {"vl": vl, "grid": f"{rows}x{cols}",
                       "block": f"{bm}x{bn}"})
    return KernelProgram(streams=streams, meta=meta)


MATMUL_GENERATORS = {
    Flavor.Baseline: gen_matmul_baseline,
    Flavor.Systolic: gen_matmul_systolic,
    Flavor.Vectorial: gen_matmul_vectorial,
}

# Tuning knobs each flavor's generator accepts beyond the problem dims.
MATMUL_PARAMS = {
    Flavor.Baseline: ("unroll",),
    Flavor.Systolic: ("rows", "cols"),
    Flavor.Vectorial: ("vl",),
}


def generate_matmul(cfg, m: int, n: int, k: int, **params) -> KernelProgram:
    """Build a matmul program for whatever flavor *cfg* selects.

    Rejects tuning knobs that do not apply to the selected flavor so a
    sweep over flavors cannot silently drop a parameter.
    """
    allowed = MATMUL_PARAMS[cfg.flavor]
    for name in sorted(params):
        if name not in allowed:
            raise GeneratorError(
                f"parameter {name!r} does not apply to flavor "
                f"{cfg.flavor.value!r} (accepts: {', '.join(allowed)})")
    return MATMUL_GENERATORS[cfg.flavor](cfg, m, n, k, **params)


# -- program text format ------------------------------------------------------


class ProgramParseError(ValueError):
    """Malformed program text; message carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def serialize_program(program: KernelProgram) -> str:
    """Render a program in the versioned line-oriented text format."""
    lines = [f"#%poolsim-program {PROGRAM_FORMAT_VERSION}"]
    lines.append(f"name {program.meta.name}")
    lines.append(f"dims {program.meta.m} {program.meta.n} {program.meta.k}")
    for key in sorted(program.meta.params):
        lines.append(f"param {key} {program.meta.params[key]}")
    for q in program.queues:
        lines.append(f"queue {q.queue_id} {q.producer} {q.consumer}")
    for core in sorted(program.streams):
        stream = program.streams[core]
        lines.append(f"stream {core} {len(stream)}")
        for instr in stream:
            lines.append(_format_instr(instr))
    lines.append("")
    return "\n".join(lines)


def _format_instr(instr: Instruction) -> str:
    op = instr.opcode
    name = MNEMONICS[op]
    if op is Opcode.ComputeFMA or op is Opcode.VFMA:
        parts = [name, str(instr.dst), str(instr.srcs[0]), str(instr.srcs[1])]
        if op is Opcode.VFMA:
            parts.append(str(instr.vlen))
    elif op is Opcode.ComputeALU:
        dst = "-" if instr.dst is None else str(instr.dst)
        srcs = [str(s) for s in instr.srcs] or ["-"]
        parts = [name, dst, ",".join(srcs)]
    elif op is Opcode.Load:
        parts = [name, str(instr.dst), str(instr.addr)]
    elif op is Opcode.Store:
        parts = [name, str(instr.srcs[0]), str(instr.addr)]
    elif op is Opcode.QPush:
        src = "-" if not instr.srcs else str(instr.srcs[0])
        parts = [name, str(instr.queue_id), src]
    elif op is Opcode.QPop:
        parts = [name, str(instr.queue_id), str(instr.dst)]
    elif op is Opcode.VLoad:
        parts = [name, str(instr.dst), str(instr.addr), str(instr.vlen)]
    elif op is Opcode.VStore:
        parts = [name, str(instr.srcs[0]), str(instr.addr), str(instr.vlen)]
    else:  # Barrier, Nop
        parts = [name]
    return " ".join(parts)


def _parse_int(token: str, line_no: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ProgramParseError(line_no, f"{what} must be an integer, got {token!r}")


def _parse_instr(tokens: list, line_no: int) -> Instruction:
    name = tokens[0]
    if name not in _OPCODE_OF:
        raise ProgramParseError(line_no, f"unknown opcode {name!r}")
    op = _OPCODE_OF[name]
    args = tokens[1:]

    def need(count):
        if len(args) != count:
            raise ProgramParseError(
                line_no, f"{name} takes {count} operand(s), got {len(args)}")

    try:
        if op is Opcode.ComputeFMA:
            need(3)
            return Instruction(op, dst=_parse_int(args[0], line_no, "dst"),
                               srcs=(_parse_int(args[1], line_no, "src"),
                                     _parse_int(args[2], line_no, "src")))
        if op is Opcode.VFMA:
            need(4)
            return Instruction(op, dst=_parse_int(args[0], line_no, "dst"),
                               srcs=(_parse_int(args[1], line_no, "src"),
                                     _parse_int(args[2], line_no, "src")),
                               vlen=_parse_int(args[3], line_no, "vlen"))
        if op is Opcode.ComputeALU:
            need(2)
            dst = None if args[0] == "-" else _parse_int(args[0], line_no, "dst")
            srcs = () if args[1] == "-" else tuple(
                _parse_int(t, line_no, "src") for t in args[1].split(","))
            return Instruction(op, dst=dst, srcs=srcs)
        if op is Opcode.Load:
            need(2)
            return Instruction(op, dst=_parse_int(args[0], line_no, "dst"),
                               addr=_parse_int(args[1], line_no, "addr"))
        if op is Opcode.Store:
            need(2)
            return Instruction(op, srcs=(_parse_int(args[0], line_no, "src"),),
                               addr=_parse_int(args[1], line_no, "addr"))
        if op is Opcode.QPush:
            need(2)
            srcs = () if args[1] == "-" else (_parse_int(args[1], line_no, "src"),)
            return Instruction(op, queue_id=_parse_int(args[0], line_no, "queue"),
                               srcs=srcs)
        if op is Opcode.QPop:
            need(2)
            return Instruction(op, queue_id=_parse_int(args[0], line_no, "queue"),
                               dst=_parse_int(args[1], line_no, "dst"))
        if op is Opcode.VLoad:
            need(3)
            return Instruction(op, dst=_parse_int(args[0], line_no, "dst"),
                               addr=_parse_int(args[1], line_no, "addr"),
                               vlen=_parse_int(args[2], line_no, "vlen"))
        if op is Opcode.VStore:
            need(3)
            return Instruction(op, srcs=(_parse_int(args[0], line_no, "src"),),
                               addr=_parse_int(args[1], line_no, "addr"),
                               vlen=_parse_int(args[2], line_no, "vlen"))
        need(0)
        return Instruction(op)
    except ValueError as exc:
        if isinstance(exc, ProgramParseError):
            raise
        raise ProgramParseError(line_no, str(exc))


def parse_program(text: str) -> KernelProgram:
    """Parse the text format back into a KernelProgram.

    Strict inverse of serialize_program: any structural deviation raises
    ProgramParseError with the offending line number.
    """
    lines = text.splitlines()
    if not lines:
        raise ProgramParseError(1, "empty document")
    header = lines[0].split()
    if len(header) != 2 or header[0] != "#%poolsim-program":
        raise ProgramParseError(1, "missing program header")
    if _parse_int(header[1], 1, "format version") != PROGRAM_FORMAT_VERSION:
        raise ProgramParseError(
            1, f"unsupported format version {header[1]} "
               f"(expected {PROGRAM_FORMAT_VERSION})")

    meta = KernelMeta("anonymous")
    queues = []
    streams = {}
    expect_instrs = 0
    current = None
    for line_no, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            if expect_instrs:
                raise ProgramParseError(line_no, "instruction line expected")
            continue
        tokens = stripped.split()
        if expect_instrs:
            current.append(_parse_instr(tokens, line_no))
            expect_instrs -= 1
            continue
        keyword = tokens[0]
        if keyword == "name":
            if len(tokens) != 2:
                raise ProgramParseError(line_no, "name takes one token")
            meta.name = tokens[1]
        elif keyword == "dims":
            if len(tokens) != 4:
                raise ProgramParseError(line_no, "dims takes three integers")
            meta.m, meta.n, meta.k = (
                _parse_int(t, line_no, "dimension") for t in tokens[1:])
        elif keyword == "param":
            if len(tokens) != 3:
                raise ProgramParseError(line_no, "param takes a key and a value")
            value = tokens[2]
            meta.params[tokens[1]] = int(value) if value.lstrip("-").isdigit() else value
        elif keyword == "queue":
            if len(tokens) != 4:
                raise ProgramParseError(
                    line_no, "queue takes id, producer, consumer")
            queues.append(QueueEdge(*(_parse_int(t, line_no, "queue field")
                                      for t in tokens[1:])))
        elif keyword == "stream":
            if len(tokens) != 3:
                raise ProgramParseError(line_no, "stream takes core id and count")
            core = _parse_int(tokens[1], line_no, "core id")
            if core in streams:
                raise ProgramParseError(line_no, f"duplicate stream for core {core}")
            expect_instrs = _parse_int(tokens[2], line_no, "instruction count")
            current = InstrStream()
            streams[core] = current
        else:
            raise ProgramParseError(line_no, f"unknown directive {keyword!r}")
    if expect_instrs:
        raise ProgramParseError(len(lines), f"{expect_instrs} instruction(s) missing "
                                            "at end of document")
    return KernelProgram(streams=streams, queues=tuple(queues), meta=meta)
