"""Hardware description of the accelerator being modeled.

The machine is a 16x16 array of int8 MAC processing elements with a small
per-PE weight register file, flanked by an input activation memory, a 32-bit
output register file and a post-processing write-back path.  A 512 KiB global
SRAM sits between those local memories and off-chip DRAM, which is reached
over a single shared 128-bit bus.

Everything the cost model and the simulator need to agree on (sizes, port
widths, per-byte energies, timing rates) lives here so the two cannot drift
apart silently.
"""

from dataclasses import dataclass, field, replace
from typing import Dict

# Memory level names used across the package (traces, mappings, reports).
LEVEL_DRAM = "dram"
LEVEL_SRAM = "sram"
LEVEL_INPUT_MEM = "input_mem"
LEVEL_WEIGHT_REGS = "weight_regs"
LEVEL_OUTPUT_RF = "output_rf"

LEVELS = (LEVEL_DRAM, LEVEL_SRAM, LEVEL_INPUT_MEM, LEVEL_WEIGHT_REGS,
          LEVEL_OUTPUT_RF)


@dataclass(frozen=True)
class EnergyTable:
    """Per-byte access energies in pJ plus the per-MAC energy.

    The on-chip entries keep a fixed ratio between each other
    (regs : input mem : output RF : SRAM = 1 : 2 : 2 : 10) and are scaled
    as a group by :func:`vitaccel.cost_model.calibrate_energy`.  DRAM cost
    is an external constant and is never rescaled.
    """

    mac_pj: float = 1.0
    weight_regs_pj: float = 1.0
    input_mem_pj: float = 2.0
    output_rf_pj: float = 2.0
    sram_pj: float = 10.0
    dram_pj: float = 100.0

    def scaled(self, s: float) -> "EnergyTable":
        return EnergyTable(
            mac_pj=self.mac_pj * s,
            weight_regs_pj=self.weight_regs_pj * s,
            input_mem_pj=self.input_mem_pj * s,
            output_rf_pj=self.output_rf_pj * s,
            sram_pj=self.sram_pj * s,
            dram_pj=self.dram_pj,
        )

    def per_byte(self) -> Dict[str, float]:
        return {
            LEVEL_WEIGHT_REGS: self.weight_regs_pj,
            LEVEL_INPUT_MEM: self.input_mem_pj,
            LEVEL_OUTPUT_RF: self.output_rf_pj,
            LEVEL_SRAM: self.sram_pj,
            LEVEL_DRAM: self.dram_pj,
        }


@dataclass(frozen=True)
class ArchConfig:
    """Sizes, rates and energy constants of the modeled accelerator."""

    # PE array geometry.
    array_rows: int = 16
    array_cols: int = 16

    clock_hz: float = 100e6

    # Local memories.
    input_mem_bytes: int = 8 * 1024
    output_rf_bytes: int = 24 * 1024          # 32-bit entries
    weight_reg_bytes_per_pe: int = 64         # tunable register depth
    sram_bytes: int = 512 * 1024

    # Write-back line buffer: one 32-bit entry per output channel of the
    # pixel vector currently being post-processed.
    writeback_entries: int = 1216

    # Single shared DRAM bus plus the SRAM-side fill/drain ports, all
    # 128-bit (16 bytes per cycle).
    dram_bus_bytes_per_cycle: int = 16
    sram_fill_bytes_per_cycle: int = 16
    sram_drain_bytes_per_cycle: int = 16

    energy: EnergyTable = field(default_factory=EnergyTable)

    # SRAM residency policy: an inter-block activation edge may stay
    # on-chip if it fits this budget together with the live set; tensors
    # produced and consumed inside an inverted-bottleneck pair always
    # stream (they are the fusion target, see vitaccel.fusion).
    resident_edge_limit_bytes: int = 256 * 1024

    @property
    def pe_count(self) -> int:
        return self.array_rows * self.array_cols

    @property
    def output_rf_entries(self) -> int:
        return self.output_rf_bytes // 4

    @property
    def weight_reg_bytes_total(self) -> int:
        return self.weight_reg_bytes_per_pe * self.pe_count

    def with_energy(self, energy: EnergyTable) -> "ArchConfig":
        return replace(self, energy=energy)

    def validate(self) -> None:
        if self.array_rows <= 0 or self.array_cols <= 0:
            raise ValueError("array dimensions must be positive")
        if self.output_rf_bytes % 4:
            raise ValueError("output RF must hold whole 32-bit entries")
        for name in ("input_mem_bytes", "sram_bytes",
                     "weight_reg_bytes_per_pe", "writeback_entries",
                     "dram_bus_bytes_per_cycle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def default_arch() -> ArchConfig:
    cfg = ArchConfig()
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# Plain-text arch config (key = value lines), the format consumed by the CLI.
# --------------------------------------------------------------------------

_ARCH_INT_KEYS = {
    "array_rows", "array_cols", "input_mem_bytes", "output_rf_bytes",
    "weight_reg_bytes_per_pe", "sram_bytes", "writeback_entries",
    "dram_bus_bytes_per_cycle", "sram_fill_bytes_per_cycle",
    "sram_drain_bytes_per_cycle", "resident_edge_limit_bytes",
}
_ARCH_FLOAT_KEYS = {"clock_hz"}
_ENERGY_KEYS = {
    "mac_pj", "weight_regs_pj", "input_mem_pj", "output_rf_pj", "sram_pj",
    "dram_pj",
}


def parse_arch_config(text: str, source: str = "<arch>") -> ArchConfig:
    """Parse ``key = value`` lines into an :class:`ArchConfig`.

    Unknown keys are rejected with the offending line number so typos in
    experiment configs fail loudly instead of silently using defaults.
    """

    arch_kwargs = {}
    energy_kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            if key in _ARCH_INT_KEYS:
                arch_kwargs[key] = int(value)
            elif key in _ARCH_FLOAT_KEYS:
                arch_kwargs[key] = float(value)
            elif key in _ENERGY_KEYS:
                energy_kwargs[key] = float(value)
            else:
                raise KeyError(key)
        except KeyError:
            raise ValueError(f"{source}:{lineno}: unknown key '{key}'") from None
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for '{key}': {value}") from exc
    energy = EnergyTable(**energy_kwargs) if energy_kwargs else EnergyTable()
    cfg = ArchConfig(energy=energy, **arch_kwargs)
    cfg.validate()
    return cfg


def serialize_arch_config(cfg: ArchConfig) -> str:
    lines = ["# accelerator configuration"]
    for key in sorted(_ARCH_INT_KEYS):
        lines.append(f"{key} = {getattr(cfg, key)}")
    for key in sorted(_ARCH_FLOAT_KEYS):
        lines.append(f"{key} = {getattr(cfg, key)!r}")
    for key in sorted(_ENERGY_KEYS):
        lines.append(f"{key} = {getattr(cfg.energy, key)!r}")
    return "\n".join(lines) + "\n"
