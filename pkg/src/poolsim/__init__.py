"""Cycle-approximate simulator for a hierarchical shared-memory manycore cluster."""

from .topology import (AreaLedger, ClusterConfig, ConfigError, Flavor,
                       ValidatedConfig, area_ledger, build_config,
                       default_config, load_config, peak_gflops,
                       validate_config, zero_load_latency)
from .kernel import (GeneratorError, Instruction, InstrStream, KernelMeta,
                     KernelProgram, Opcode, ProgramParseError, QueueEdge,
                     gen_matmul_baseline, gen_matmul_systolic,
                     gen_matmul_vectorial, generate_matmul, parse_program,
                     serialize_program)
from .memsys import AddressError, BankId, MemorySystem, ReqKind, map_address
from .core import StallReason
from .engine import (CycleLimitExceeded, DeadlockDetected,
                     ProgramConfigMismatch, RawCounters, SimulationError,
                     SweepPoint, run, run_sweep)

__version__ = "0.1.0"
