"""Cluster geometry, configuration, and first-order derived quantities.

The simulated machine is a hierarchical shared-L1 cluster:

  * a *tile* couples a few cores with a set of single-cycle scratchpad
    banks over a local crossbar,
  * *tiles* are grouped into fully connected *groups*,
  * *groups* are connected to each other at the top level.

Every core can address every bank; only the latency differs.  Crossing
one hierarchy level (tile -> group, group -> cluster) adds a fixed
number of cycles each way on top of the local access latency, so with
the defaults a request observes 1, 3, or 5 cycles of zero-load latency
depending on where the target bank lives relative to the origin core.

Three flavors of the same cluster are modeled:

  * ``Baseline``  - plain scalar cores, all operands moved by loads/stores.
  * ``Systolic``  - scalar cores extended with bounded FIFO queues used
                    for direct producer/consumer operand streaming.
  * ``Vectorial`` - one scalar core per tile drives a small vector unit
                    with several FPU lanes.

This module is deliberately free of simulator state: everything here is
a pure function of the configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Union

import yaml


class Flavor(Enum):
    """Architectural flavor of the cluster."""

    Baseline = "baseline"
    Systolic = "systolic"
    Vectorial = "vectorial"


# Tile area of the scalar baseline tile is the unit of the area ledger.
TILE_AREA_BASELINE = 1.00
# Queue storage and the extended decoder grow the systolic tile by 5%.
SYSTOLIC_AREA_OVERHEAD = 0.05
# Vector register file and FPU lanes grow the vectorial tile by 8%.
VECTORIAL_AREA_OVERHEAD = 0.08

# Architectural register count per core (shared id space for scalar and
# vector registers in the timing model).
NUM_REGISTERS = 32


def _is_pow2(n: int) -> bool:
    return isinstance(n, int) and n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ClusterConfig:
    """Static description of one cluster instance.

    All fields have defaults matching the reference 256-core design
    point (4 cores x 16 banks per tile, 16 tiles per group, 4 groups,
    1 MiB of scratchpad, 800 MHz).
    """

    # Architectural flavor; selects the compute-unit accounting and
    # which instruction classes a program may use.
    flavor: Flavor = Flavor.Baseline
    # Cores sharing one tile-local crossbar (scalar cores; the vectorial
    # flavor has a single scalar core per tile driving the vector unit).
    cores_per_tile: int = 4
    # Scratchpad banks per tile; one word per bank per cycle.
    banks_per_tile: int = 16
    # Tiles in one fully connected group.
    tiles_per_group: int = 16
    # Groups in the cluster.
    groups: int = 4
    # Words of scratchpad storage per bank (32-bit words).
    bank_words: int = 256
    # Bytes per scratchpad word.
    word_bytes: int = 4
    # Zero-load latency of a tile-local access, cycles.
    latency_local_cycles: int = 1
    # Extra cycles added per hierarchy level crossed (one way).
    latency_per_level_cycles: int = 2
    # Core and interconnect clock.
    frequency_hz: float = 800e6
    # FLOPs one FPU retires per busy cycle (1 = one fused op counted as
    # one FLOP-slot; the throughput convention used throughout).
    flops_per_fpu_cycle: int = 1
    # FPU lanes per vector unit (vectorial flavor only).
    fpus_per_vector_unit: int = 4
    # Longest vector an instruction may carry.
    max_vector_length: int = 64
    # Scoreboard depth: loads a core may keep in flight.
    max_outstanding_loads: int = 8
    # Elements a streaming queue can hold (systolic flavor).
    queue_capacity: int = 4

    # -- derived quantities ------------------------------------------------

    @property
    def total_tiles(self) -> int:
        return self.tiles_per_group * self.groups

    @property
    def total_cores(self) -> int:
        return self.cores_per_tile * self.total_tiles

    @property
    def total_banks(self) -> int:
        return self.banks_per_tile * self.total_tiles

    @property
    def spm_words(self) -> int:
        return self.bank_words * self.total_banks

    @property
    def spm_bytes(self) -> int:
        return self.spm_words * self.word_bytes

    @property
    def banking_factor(self) -> float:
        """Banks per core; >= 1 keeps single-cycle conflict odds low."""
        return self.banks_per_tile / self.cores_per_tile

    @property
    def compute_units(self) -> int:
        """FPU-equivalent units counted by the utilization denominator."""
        if self.flavor is Flavor.Vectorial:
            return self.total_tiles * self.fpus_per_vector_unit
        return self.total_cores


class ValidatedConfig(ClusterConfig):
    """Marker type: a ClusterConfig that passed validate_config()."""


class ConfigError(ValueError):
    """Invalid configuration; carries the complete list of violations."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def config_errors(cfg: ClusterConfig) -> list[str]:
    """Return every violated invariant of *cfg* (empty list if valid)."""
    errs = []
    for name in ("cores_per_tile", "banks_per_tile", "tiles_per_group",
                 "groups"):
        val = getattr(cfg, name)
        if not isinstance(val, int) or val < 1:
            errs.append(f"{name} must be a positive integer, got {val!r}")
        elif not _is_pow2(val):
            errs.append(f"{name} must be a power of two, got {val}")
    if isinstance(cfg.banks_per_tile, int) and isinstance(cfg.cores_per_tile, int):
        if cfg.banks_per_tile < cfg.cores_per_tile:
            errs.append(
                f"banks_per_tile ({cfg.banks_per_tile}) must be >= "
                f"cores_per_tile ({cfg.cores_per_tile})")
    if cfg.flavor is Flavor.Vectorial and cfg.cores_per_tile != 1:
        errs.append("vectorial flavor requires cores_per_tile == 1 "
                    f"(one scalar core per vector unit), got {cfg.cores_per_tile}")
    if not isinstance(cfg.bank_words, int) or cfg.bank_words < 1:
        errs.append(f"bank_words must be a positive integer, got {cfg.bank_words!r}")
    if not isinstance(cfg.word_bytes, int) or cfg.word_bytes < 1:
        errs.append(f"word_bytes must be a positive integer, got {cfg.word_bytes!r}")
    if not isinstance(cfg.latency_local_cycles, int) or cfg.latency_local_cycles < 1:
        errs.append("latency_local_cycles must be an integer >= 1, got "
                    f"{cfg.latency_local_cycles!r}")
    if not isinstance(cfg.latency_per_level_cycles, int) or cfg.latency_per_level_cycles < 0:
        errs.append("latency_per_level_cycles must be an integer >= 0, got "
                    f"{cfg.latency_per_level_cycles!r}")
    if not cfg.frequency_hz > 0:
        errs.append(f"frequency_hz must be > 0, got {cfg.frequency_hz!r}")
    if not isinstance(cfg.flops_per_fpu_cycle, int) or cfg.flops_per_fpu_cycle < 1:
        errs.append("flops_per_fpu_cycle must be an integer >= 1, got "
                    f"{cfg.flops_per_fpu_cycle!r}")
    if not isinstance(cfg.fpus_per_vector_unit, int) or cfg.fpus_per_vector_unit < 1:
        errs.append("fpus_per_vector_unit must be an integer >= 1, got "
                    f"{cfg.fpus_per_vector_unit!r}")
    if not isinstance(cfg.max_vector_length, int) or cfg.max_vector_length < 1:
        errs.append("max_vector_length must be an integer >= 1, got "
                    f"{cfg.max_vector_length!r}")
    if not isinstance(cfg.max_outstanding_loads, int) or cfg.max_outstanding_loads < 1:
        errs.append("max_outstanding_loads must be an integer >= 1, got "
                    f"{cfg.max_outstanding_loads!r}")
    if not isinstance(cfg.queue_capacity, int) or cfg.queue_capacity < 1:
        errs.append(f"queue_capacity must be an integer >= 1, got "
                    f"{cfg.queue_capacity!r}")
    return errs


def validate_config(cfg: ClusterConfig) -> ValidatedConfig:
    """Check every invariant; raise ConfigError listing all violations."""
    errs = config_errors(cfg)
    if errs:
        raise ConfigError(errs)
    if isinstance(cfg, ValidatedConfig):
        return cfg
    return ValidatedConfig(**{f.name: getattr(cfg, f.name)
                              for f in fields(ClusterConfig)})


# -- core / bank coordinates ----------------------------------------------
#
# Cores and banks are numbered flat, row-major over (group, tile, slot):
#   core  c  lives in tile  c // cores_per_tile
#   bank  b  lives in tile  b // banks_per_tile
# and tile t lives in group t // tiles_per_group.


def tile_of_core(cfg: ClusterConfig, core: int) -> int:
    return core // cfg.cores_per_tile


def tile_of_bank(cfg: ClusterConfig, bank: int) -> int:
    return bank // cfg.banks_per_tile


def group_of_tile(cfg: ClusterConfig, tile: int) -> int:
    return tile // cfg.tiles_per_group


def levels_crossed(cfg: ClusterConfig, origin_tile: int, target_tile: int) -> int:
    """Hierarchy levels a request crosses: 0 same tile, 1 same group, 2 else."""
    if origin_tile == target_tile:
        return 0
    if group_of_tile(cfg, origin_tile) == group_of_tile(cfg, target_tile):
        return 1
    return 2


def zero_load_latency(cfg: ClusterConfig, origin_core: int,
                      target_bank: Union[int, tuple]) -> int:
    """Cycles from grant to response delivery with no contention.

    *target_bank* is a flat bank index or a (group, tile, bank) triple.
    With the default parameters this is 1 for a tile-local bank, 3 for a
    bank in another tile of the same group, and 5 across groups.
    """
    if isinstance(target_bank, tuple):
        grp, tile_in_grp, _ = target_bank
        bank_tile = grp * cfg.tiles_per_group + tile_in_grp
    else:
        bank_tile = tile_of_bank(cfg, target_bank)
    levels = levels_crossed(cfg, tile_of_core(cfg, origin_core), bank_tile)
    return cfg.latency_local_cycles + cfg.latency_per_level_cycles * levels


def tile_to_tile_latency(cfg: ClusterConfig, origin_tile: int,
                         target_tile: int) -> int:
    """Zero-load latency between two tiles (queue transit uses this)."""
    levels = levels_crossed(cfg, origin_tile, target_tile)
    return cfg.latency_local_cycles + cfg.latency_per_level_cycles * levels


# -- throughput and area ----------------------------------------------------


def peak_gflops(cfg: ClusterConfig) -> float:
    """Peak arithmetic throughput in GFLOP/s.

    Counts one FLOP-slot per FPU-equivalent unit per cycle: every scalar
    core in the baseline/systolic flavors, every vector FPU lane in the
    vectorial flavor.  The default design point gives 256 units at
    800 MHz = 204.8 GFLOP/s for all three flavors.
    """
    return cfg.compute_units * cfg.flops_per_fpu_cycle * cfg.frequency_hz / 1e9


@dataclass(frozen=True)
class AreaLedger:
    """Relative silicon area of one cluster instance."""

    flavor: Flavor
    tile_area: float        # relative to the baseline tile (= 1.00)
    total_tiles: int
    cluster_area: float     # tile_area * total_tiles

    @property
    def area_overhead(self) -> float:
        """Fractional tile-area overhead versus the baseline tile."""
        return self.tile_area / TILE_AREA_BASELINE - 1.0


def flavor_tile_area(flavor: Flavor) -> float:
    if flavor is Flavor.Systolic:
        return TILE_AREA_BASELINE * (1.0 + SYSTOLIC_AREA_OVERHEAD)
    if flavor is Flavor.Vectorial:
        return TILE_AREA_BASELINE * (1.0 + VECTORIAL_AREA_OVERHEAD)
    return TILE_AREA_BASELINE


def area_ledger(cfg: ClusterConfig) -> AreaLedger:
    tile = flavor_tile_area(cfg.flavor)
    return AreaLedger(flavor=cfg.flavor, tile_area=tile,
                      total_tiles=cfg.total_tiles,
                      cluster_area=tile * cfg.total_tiles)


# -- configuration files -----------------------------------------------------
#
# A configuration file is a flat key/value document (parsed with YAML)
# whose keys mirror ClusterConfig fields one-to-one.  Every key is
# optional; unknown keys are an error.  `cores_per_tile` defaults by
# flavor (4 for baseline/systolic, 1 for vectorial) when absent.

_CONFIG_FIELDS = {f.name for f in fields(ClusterConfig)}


def parse_flavor(value) -> Flavor:
    if isinstance(value, Flavor):
        return value
    if isinstance(value, str):
        try:
            return Flavor(value.strip().lower())
        except ValueError:
            pass
    raise ConfigError([f"unknown flavor {value!r}; expected one of "
                       f"{[fl.value for fl in Flavor]}"])


def _coerce(name: str, value):
    """Coerce a raw config value to the field's type, strictly."""
    if name == "flavor":
        return parse_flavor(value)
    if name == "frequency_hz":
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError([f"{name} must be a number, got {value!r}"])
    if isinstance(value, bool):
        raise ConfigError([f"{name} must be an integer, got {value!r}"])
    if isinstance(value, int):
        return value
    if isinstance(value, (str, float)):
        try:
            as_float = float(value)
        except ValueError:
            raise ConfigError([f"{name} must be an integer, got {value!r}"])
        if as_float != int(as_float):
            raise ConfigError([f"{name} must be an integer, got {value!r}"])
        return int(as_float)
    raise ConfigError([f"{name} must be an integer, got {value!r}"])


def build_config(raw: dict) -> ClusterConfig:
    """Materialize a ClusterConfig from a flat key/value mapping.

    Applies flavor-dependent defaults for keys that are absent and
    rejects unknown keys.  Does not run invariant validation; callers
    follow up with validate_config().
    """
    unknown = sorted(set(raw) - _CONFIG_FIELDS)
    if unknown:
        raise ConfigError([f"unknown configuration key {k!r}" for k in unknown])
    values = {name: _coerce(name, value) for name, value in raw.items()}
    flavor = values.get("flavor", Flavor.Baseline)
    if "cores_per_tile" not in values and flavor is Flavor.Vectorial:
        values["cores_per_tile"] = 1
    return ClusterConfig(**values)


def default_config(flavor: Flavor = Flavor.Baseline) -> ClusterConfig:
    """Reference design point for *flavor* (256 compute units, 1 MiB SPM)."""
    return build_config({"flavor": flavor})


def load_config_file(path) -> dict:
    """Read a flat key/value configuration document into a raw dict."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not a valid key/value document: {exc}"])
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: expected a flat key/value mapping"])
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ConfigError([f"{path}: key {key!r} must be a scalar value"])
    return data


def load_config(path) -> ClusterConfig:
    """Load, materialize, and return the config from a file (unvalidated)."""
    return build_config(load_config_file(path))
