"""Banked scratchpad memory with word interleaving and bank arbitration.

Addresses name 32-bit words.  Word ``addr`` lives in bank
``addr % total_banks`` at offset ``addr // total_banks``, so consecutive
words of any operand stripe hit consecutive banks.  Flat bank indices
decompose row-major into (group, tile, bank-in-tile).

Each bank accepts one request per cycle.  When several cores contend,
the grant rotates round-robin over the core index, starting just after
the core granted last; losers stay queued and retry.  A granted request
delivers its response to the origin core ``zero_load_latency`` cycles
after the grant, so the observed latency exceeds the zero-load floor
exactly by the cycles lost to arbitration.

Streaming-queue transfers do not pass through the banks (contention is
modeled at the banks only); they still show up in the request trace as
``QueueOp`` rows for visibility.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

from .topology import ClusterConfig, zero_load_latency


class BankId(NamedTuple):
    group: int
    tile: int   # tile within the group
    bank: int   # bank within the tile


class ReqKind(IntEnum):
    Read = 0
    Write = 1
    QueueOp = 2


TRACE_COLUMNS = ("req_id", "origin_core", "group", "tile", "bank", "kind",
                 "addr", "issue_cycle", "grant_cycle", "complete_cycle")


class AddressError(ValueError):
    """Word address outside the scratchpad."""


def map_address(cfg: ClusterConfig, addr: int) -> tuple:
    """Decompose a word address into (BankId, offset-in-bank)."""
    if not 0 <= addr < cfg.spm_words:
        raise AddressError(
            f"address {addr} outside scratchpad of {cfg.spm_words} words")
    flat = addr % cfg.total_banks
    offset = addr // cfg.total_banks
    tile_flat = flat // cfg.banks_per_tile
    return BankId(group=tile_flat // cfg.tiles_per_group,
                  tile=tile_flat % cfg.tiles_per_group,
                  bank=flat % cfg.banks_per_tile), offset


def flat_bank_index(cfg: ClusterConfig, bank: BankId) -> int:
    return ((bank.group * cfg.tiles_per_group + bank.tile) * cfg.banks_per_tile
            + bank.bank)


@dataclass
class MemRequest:
    """One word-granular scratchpad access (inspection-level view)."""

    req_id: int
    origin_core: int
    addr: int
    kind: ReqKind
    issue_cycle: int
    target: BankId = None
    grant_cycle: int = -1
    complete_cycle: int = -1


@dataclass
class MemCounters:
    """Aggregate traffic statistics, by request kind."""

    requests: list = field(default_factory=lambda: [0, 0, 0])
    grant_wait_cycles: int = 0   # total cycles requests waited to be granted

    @property
    def total_requests(self) -> int:
        return sum(self.requests)


class MemorySystem:
    """All banks of one cluster plus the response scheduler.

    The engine drives the fast-path API (``submit`` / ``arbitrate`` /
    ``pop_deliveries``) with plain ints; ``submit_request`` wraps it for
    MemRequest-level use in tests and tools.  ``token`` is opaque to the
    memory system and comes back with the delivery.
    """

    def __init__(self, cfg: ClusterConfig, trace=None):
        self.cfg = cfg
        self.total_banks = cfg.total_banks
        self.total_cores = cfg.total_cores
        self.counters = MemCounters()
        self.trace = trace
        if trace is not None:
            trace.write(",".join(TRACE_COLUMNS) + "\n")
        # bank -> list of waiting [core, seq, token, latency, issue_cycle,
        # addr, kind]; insertion order is submission order.
        self._waiting: dict = {}
        self._cursor = array("i", [-1]) * self.total_banks  # last granted core
        self._due: dict = {}         # cycle -> list of tokens to deliver
        self._seq = 0
        self._storage = None         # lazily allocated word array
        # latency lookup: core tile and per-level constants
        self._banks_per_tile = cfg.banks_per_tile
        self._tiles_per_group = cfg.tiles_per_group
        self._lat_local = cfg.latency_local_cycles
        self._lat_level = cfg.latency_per_level_cycles

    # -- fast path ----------------------------------------------------------

    def latency_to_bank(self, core: int, bank: int) -> int:
        ctile = core // self.cfg.cores_per_tile
        btile = bank // self._banks_per_tile
        if ctile == btile:
            return self._lat_local
        if ctile // self._tiles_per_group == btile // self._tiles_per_group:
            return self._lat_local + self._lat_level
        return self._lat_local + 2 * self._lat_level

    def submit(self, core: int, addr: int, kind: int, token, cycle: int) -> int:
        """Queue one word access; returns the request id."""
        bank = addr % self.total_banks
        lat = self.latency_to_bank(core, bank)
        seq = self._seq
        self._seq = seq + 1
        entry = [core, seq, token, lat, cycle, addr, kind]
        waiting = self._waiting.get(bank)
        if waiting is None:
            self._waiting[bank] = [entry]
        else:
            waiting.append(entry)
        self.counters.requests[kind] += 1
        return seq

    def arbitrate(self, cycle: int) -> list:
        """Grant at most one waiting request per bank for this cycle.

        Returns (bank, core, req_id) per grant, in bank order, and
        schedules each response ``latency`` cycles after the grant.
        """
        grants = []
        empty = []
        ncores = self.total_cores
        cursor = self._cursor
        due = self._due
        for bank, waiting in self._waiting.items():
            if len(waiting) == 1:
                entry = waiting.pop()
            else:
                after = cursor[bank] + 1
                best = 0
                best_key = ((waiting[0][0] - after) % ncores, waiting[0][1])
                for idx in range(1, len(waiting)):
                    e = waiting[idx]
                    key = ((e[0] - after) % ncores, e[1])
                    if key < best_key:
                        best_key = key
                        best = idx
                entry = waiting.pop(best)
            if not waiting:
                empty.append(bank)
            core, seq, token, lat, issued, addr, kind = entry
            cursor[bank] = core
            complete = cycle + lat
            self.counters.grant_wait_cycles += cycle - issued
            if token is not None:
                lst = due.get(complete)
                if lst is None:
                    due[complete] = [token]
                else:
                    lst.append(token)
            grants.append((bank, core, seq))
            if self.trace is not None:
                self.trace_row(seq, core, bank, kind, addr, issued, cycle,
                                complete)
        for bank in empty:
            del self._waiting[bank]
        return grants

    def pop_deliveries(self, cycle: int) -> list:
        """Tokens whose responses arrive at the origin in this cycle."""
        return self._due.pop(cycle, ())

    def idle(self) -> bool:
        return not self._waiting and not self._due

    # -- request-object API ---------------------------------------------------

    def submit_request(self, req: MemRequest) -> MemRequest:
        target, _ = map_address(self.cfg, req.addr)
        req.target = target
        req.req_id = self.submit(req.origin_core, req.addr, int(req.kind),
                                 None, req.issue_cycle)
        return req

    # -- storage ---------------------------------------------------------------

    def _ensure_storage(self):
        if self._storage is None:
            # zero-initialized; reads of never-written words return 0
            self._storage = array("l", bytes(8 * self.cfg.spm_words))
        return self._storage

    def read_word(self, addr: int) -> int:
        if not 0 <= addr < self.cfg.spm_words:
            raise AddressError(f"read of address {addr} outside scratchpad")
        if self._storage is None:
            return 0
        return self._storage[addr]

    def write_word(self, addr: int, value: int):
        if not 0 <= addr < self.cfg.spm_words:
            raise AddressError(f"write of address {addr} outside scratchpad")
        self._ensure_storage()[addr] = value

    # -- tracing ----------------------------------------------------------------

    def trace_row(self, req_id, core, bank, kind, addr, issued, granted,
                  complete):
        tile_flat = bank // self._banks_per_tile
        self.trace.write(
            f"{req_id},{core},{tile_flat // self._tiles_per_group},"
            f"{tile_flat % self._tiles_per_group},{bank % self._banks_per_tile},"
            f"{ReqKind(kind).name},{addr},{issued},{granted},{complete}\n")

    def trace_queue_event(self, core, home_tile, issued, visible):
        """Record a streaming-queue transfer in the same trace schema.

        Queue traffic bypasses bank arbitration, so these rows share the id
        space of ordinary requests but grant at their issue cycle.
        """
        if self.trace is not None:
            req_id = self._seq
            self._seq = req_id + 1
            self.trace.write(
                f"{req_id},{core},{home_tile // self._tiles_per_group},"
                f"{home_tile % self._tiles_per_group},-,QueueOp,-,"
                f"{issued},{issued},{visible}\n")


def zero_load_latency_check(cfg: ClusterConfig, core: int, addr: int) -> int:
    """Reference latency computation via the topology module (tests)."""
    bank, _ = map_address(cfg, addr)
    return zero_load_latency(cfg, core, bank)
