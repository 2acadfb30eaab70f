"""Instruction-level simulator of the accelerator.

Executes programs built from :mod:`vitaccel.isa` against real memory
contents: a DRAM image, the 512 KiB scratchpad, double-banked input and
weight memories (twice the architectural size, the program alternates
halves) and the 32-bit output register file.  The functional pass runs
every instruction in program order, so results are bit-exact and
independent of the timing model; a second pass per region then settles
the clock from per-tile-group byte totals.

Timing model between two syncs:

  bus     the shared DRAM port.  Weight fetches and layernorm table
          reads form a serial preamble (nothing computes against stale
          weights); remaining DRAM traffic belongs to its tile group.
  fill    the SRAM-side staging port.  A group's transfers begin when
          the previous group's compute begins (that is when a bank of
          the double-buffered local memories frees up) and must finish
          before its own compute starts.
  array   wave counts come from :func:`vitaccel.mapping.wave_count`,
          the shared contract with the analytical model.
  drain   one write-back queue.  A store drains after the compute of
          the group that produced it; a store into input memory feeds
          a later group, which may not compute before the hand-off.
  wb      deferred vector passes run after the region's tile work.

Accumulators are 64-bit wide internally and saturate to 32 bits at
drain readout, which makes results independent of accumulation order.
Byte traffic is counted per memory level exactly as the analytical
model counts it, so a run can be compared to the model directly.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arch import (LEVEL_DRAM, LEVEL_INPUT_MEM, LEVEL_OUTPUT_RF, LEVEL_SRAM,
                   LEVEL_WEIGHT_REGS, ArchConfig)
from .isa import (LVL_DRAM, LVL_IMEM, LVL_SRAM, LVL_WREG, Compute, Halt,
                  Load, PostCfg, PostPass, Store, Sync)
from .mapping import SpatialMapping, wave_count
from .postproc import apply_postops
from .workload import (KIND_ADD, KIND_DWCONV, KIND_GEMM, LayerDims,
                       LayerSpec, POST_ACT, POST_LAYERNORM, POST_REQUANT,
                       POST_SOFTMAX, PostOp, layer_macs)

__all__ = ["Machine", "MachineError", "RunResult"]

_INT32_MIN = -(1 << 31)
_INT32_MAX = (1 << 31) - 1

_LEVEL_NAME = {
    LVL_DRAM: LEVEL_DRAM,
    LVL_SRAM: LEVEL_SRAM,
    LVL_IMEM: LEVEL_INPUT_MEM,
    LVL_WREG: LEVEL_WEIGHT_REGS,
}

_POST_KIND = {"act": POST_ACT, "rq": POST_REQUANT,
              "ln": POST_LAYERNORM, "sm": POST_SOFTMAX}


class MachineError(RuntimeError):
    """Raised for invalid programs: bad addresses, capacity violations,
    missing configuration, broken tile ordering or a watchdog trip."""


@dataclass
class RunResult:
    """Everything one program execution produced besides memory state."""

    cycles: int
    macs: int
    access_bytes: Dict[str, int]
    energy_pj: Dict[str, float]
    region_cycles: List[int]
    trace: List[Tuple[int, str, str, int]]
    dram_reads: List[Tuple[int, int]]
    dram_writes: List[Tuple[int, int]]
    sram_reads: List[Tuple[int, int]]
    sram_writes: List[Tuple[int, int]]

    @property
    def total_energy_pj(self) -> float:
        return sum(self.energy_pj.values())

    @property
    def chip_energy_pj(self) -> float:
        return self.total_energy_pj - self.energy_pj.get(LEVEL_DRAM, 0.0)


class _Group:
    __slots__ = ("idx", "bus", "fill", "waves", "array_bytes")

    def __init__(self, idx: int):
        self.idx = idx
        self.bus = 0
        self.fill = 0
        self.waves = 0
        self.array_bytes = 0


@dataclass
class _Drain:
    producer: int               # tile group that filled the accumulators
    feed: Optional[int]         # group unblocked by this hand-off
    level: str
    nbytes: int


class _Region:
    """Per-region bookkeeping collected by the functional pass."""

    def __init__(self):
        self.groups: Dict[int, _Group] = {}
        self.order: List[int] = []
        self.preload_bytes = 0
        self.drains: List[_Drain] = []
        self.passes: List[Tuple[int, int, int]] = []  # in, out, dram bytes
        self.last_compute: Optional[int] = None
        self.n_instr = 0

    def group(self, gid: int) -> _Group:
        g = self.groups.get(gid)
        if g is None:
            g = _Group(len(self.order))
            self.groups[gid] = g
            self.order.append(gid)
        return g


@dataclass
class _SlotCfg:
    vec_len: int
    ops: Tuple[PostOp, ...]
    gamma: Optional[np.ndarray]
    beta: Optional[np.ndarray]
    out_bytes: int              # element width after the chain


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class Machine:
    """One accelerator instance bound to a DRAM image.

    ``dram`` is either a 1-D int8 array (shared with the caller and
    mutated in place) or a byte size to allocate zeroed.  On-chip
    memories start zeroed at construction and persist across ``run``
    calls; traffic counters reset per run.
    """

    def __init__(self, arch: ArchConfig, dram, max_cycles: Optional[int] = None):
        arch.validate()
        self.arch = arch
        if isinstance(dram, (int, np.integer)):
            dram = np.zeros(int(dram), dtype=np.int8)
        dram = np.asarray(dram)
        if dram.dtype != np.int8 or dram.ndim != 1:
            raise MachineError("dram image must be a 1-D int8 array")
        self.dram = dram
        self.sram = np.zeros(arch.sram_bytes, dtype=np.int8)
        self.imem = np.zeros(2 * arch.input_mem_bytes, dtype=np.int8)
        self.wreg = np.zeros(2 * arch.weight_reg_bytes_total, dtype=np.int8)
        self.orf = np.zeros(arch.output_rf_entries, dtype=np.int64)
        self.max_cycles = max_cycles
        self._slots: Dict[int, _SlotCfg] = {}

    # -- memory plumbing ---------------------------------------------------

    def _mem(self, lvl: int) -> np.ndarray:
        return (self.dram, self.sram, self.imem, self.wreg)[lvl]

    def _check_span(self, lvl: int, addr: int, nbytes: int, what: str) -> None:
        size = self._mem(lvl).size
        if addr < 0 or addr + nbytes > size:
            raise MachineError(
                f"{what}: {_LEVEL_NAME[lvl]} range [{addr}, {addr + nbytes})"
                f" outside 0..{size}")

    def _count(self, lvl_name: str, nbytes: int) -> None:
        self._bytes[lvl_name] = self._bytes.get(lvl_name, 0) + nbytes

    def _log(self, lvl: int, reads: bool, addr: int, nbytes: int) -> None:
        if lvl == LVL_DRAM:
            (self._dram_reads if reads else self._dram_writes).append(
                (addr, nbytes))
        elif lvl == LVL_SRAM:
            (self._sram_reads if reads else self._sram_writes).append(
                (addr, nbytes))

    # -- functional execution ----------------------------------------------

    def _exec_load(self, ins: Load, reg: _Region) -> None:
        p1 = ins.pitch1 or ins.row_bytes
        p2 = ins.pitch2 or ins.n1 * p1
        nbytes = ins.nbytes
        last = (ins.n2 - 1) * p2 + (ins.n1 - 1) * p1 + ins.row_bytes
        self._check_span(ins.src_level, ins.src_addr, last, "load src")
        self._check_span(ins.dst_level, ins.dst_addr, nbytes, "load dst")
        src = self._mem(ins.src_level)
        offs = (np.arange(ins.n2, dtype=np.int64)[:, None] * p2
                + np.arange(ins.n1, dtype=np.int64)[None, :] * p1).ravel()
        idx = ins.src_addr + offs[:, None] + np.arange(ins.row_bytes)
        data = src[idx.ravel()]
        self._mem(ins.dst_level)[ins.dst_addr:ins.dst_addr + nbytes] = data

        self._count(_LEVEL_NAME[ins.src_level], nbytes)
        self._count(_LEVEL_NAME[ins.dst_level], nbytes)
        self._log(ins.src_level, True, ins.src_addr, nbytes)
        self._log(ins.dst_level, False, ins.dst_addr, nbytes)
        if ins.tee_addr is not None:
            self._check_span(LVL_SRAM, ins.tee_addr, nbytes, "load tee")
            self.sram[ins.tee_addr:ins.tee_addr + nbytes] = data
            self._count(LEVEL_SRAM, nbytes)
            self._sram_writes.append((ins.tee_addr, nbytes))

        g = reg.group(ins.tile)
        if ins.src_level == LVL_DRAM and ins.dst_level == LVL_WREG:
            reg.preload_bytes += nbytes      # serial weight preamble
            g.fill += nbytes
        elif ins.src_level == LVL_DRAM and ins.dst_level == LVL_SRAM:
            g.bus += nbytes
        elif ins.src_level == LVL_DRAM:
            g.bus += nbytes
            g.fill += nbytes
        else:
            g.fill += nbytes

    def _weight_block(self, ins: Compute, n_w: int) -> np.ndarray:
        self._check_span(LVL_WREG, ins.wreg_base, n_w, "compute weights")
        return self.wreg[ins.wreg_base:ins.wreg_base + n_w].astype(np.int64)

    def _patches(self, ins: Compute) -> np.ndarray:
        n_in = ins.b * ins.wx * ins.wy * ins.c
        self._check_span(LVL_IMEM, ins.imem_base, n_in, "compute window")
        blk = self.imem[ins.imem_base:ins.imem_base + n_in] \
            .reshape(ins.b, ins.wx, ins.wy, ins.c).astype(np.int64)
        pat = sliding_window_view(blk, (ins.fx, ins.fy), axis=(1, 2))
        return pat[:, ::ins.sx, ::ins.sy][:, :ins.ox, :ins.oy]

    def _exec_compute(self, ins: Compute, reg: _Region) -> None:
        kind = ins.kind
        if kind == KIND_DWCONV and ins.k != ins.c:
            raise MachineError(
                f"depthwise tiles carry channels in both k and c "
                f"(got k={ins.k}, c={ins.c})")
        if kind == KIND_ADD and ins.k != ins.c:
            raise MachineError(
                f"add tiles carry channels in both k and c "
                f"(got k={ins.k}, c={ins.c})")
        if kind == KIND_GEMM and ins.oy != 1:
            raise MachineError("gemm rows run along ox; oy must be 1")

        out_w = ins.c if kind in (KIND_DWCONV, KIND_ADD) else ins.k
        rows = ins.b * ins.ox * ins.oy
        last_entry = ins.orf_base + (rows - 1) * ins.kstride + out_w
        if ins.orf_base < 0 or last_entry > self.orf.size:
            raise MachineError(
                f"compute accumulators: output RF range "
                f"[{ins.orf_base}, {last_entry}) outside 0..{self.orf.size}")

        if kind == KIND_ADD:
            n_blk = rows * ins.c
            self._check_span(LVL_IMEM, ins.imem_base, n_blk, "add lhs")
            self._check_span(LVL_IMEM, ins.aux_base, n_blk, "add rhs")
            lhs = self.imem[ins.imem_base:ins.imem_base + n_blk]
            rhs = self.imem[ins.aux_base:ins.aux_base + n_blk]
            contrib = (lhs.astype(np.int64)
                       + rhs.astype(np.int64)).reshape(rows, out_w)
        elif kind == KIND_GEMM:
            n_in = ins.b * ins.ox * ins.c
            self._check_span(LVL_IMEM, ins.imem_base, n_in, "gemm rows")
            x = self.imem[ins.imem_base:ins.imem_base + n_in] \
                .reshape(ins.b, ins.ox, ins.c).astype(np.int64)
            if ins.per_batch_w:
                w = self._weight_block(ins, ins.b * ins.k * ins.c) \
                    .reshape(ins.b, ins.k, ins.c)
                contrib = np.einsum("bpc,bkc->bpk", x, w)
            else:
                w = self._weight_block(ins, ins.k * ins.c) \
                    .reshape(ins.k, ins.c)
                contrib = np.einsum("bpc,kc->bpk", x, w)
            contrib = contrib.reshape(rows, out_w)
        elif kind == KIND_DWCONV:
            pat = self._patches(ins)
            w = self._weight_block(ins, ins.c * ins.fx * ins.fy) \
                .reshape(ins.c, ins.fx, ins.fy)
            contrib = np.einsum("bxycij,cij->bxyc", pat, w) \
                .reshape(rows, out_w)
        else:                               # conv2d / pwconv
            pat = self._patches(ins)
            w = self._weight_block(ins, ins.k * ins.c * ins.fx * ins.fy) \
                .reshape(ins.k, ins.c, ins.fx, ins.fy)
            contrib = np.einsum("bxycij,kcij->bxyk", pat, w) \
                .reshape(rows, out_w)

        idx = (ins.orf_base
               + np.arange(rows, dtype=np.int64)[:, None] * ins.kstride
               + np.arange(out_w))
        if ins.init:
            self.orf[idx] = contrib
        else:
            self.orf[idx] += contrib

        spec = LayerSpec(
            "tile", kind,
            LayerDims(b=ins.b, k=ins.k, c=ins.c, ox=ins.ox, oy=ins.oy,
                      fx=ins.fx, fy=ins.fy),
            ["x", "y"] if kind == KIND_ADD else ["x"],
            stride=(ins.sx, ins.sy))
        waves = wave_count(spec, SpatialMapping(ins.dataflow))
        macs = layer_macs(spec)
        assert macs <= 256 * waves          # array-wide throughput ceiling
        imem_rd, wreg_rd, orf_upd = self._array_side(ins, macs, rows * out_w)
        self._count(LEVEL_INPUT_MEM, imem_rd)
        self._count(LEVEL_WEIGHT_REGS, wreg_rd)
        self._count(LEVEL_OUTPUT_RF, orf_upd)
        self._macs += macs

        g = reg.group(ins.tile)
        g.waves += waves
        g.array_bytes += imem_rd + wreg_rd
        reg.last_compute = ins.tile

    @staticmethod
    def _array_side(ins: Compute, macs: int, out_el: int) -> Tuple[int, int, int]:
        """Array-port bytes of one compute: input-memory reads, weight
        register reads and accumulator update traffic.  Mirrors the
        per-slice decomposition the analytical model integrates."""
        if ins.kind == KIND_ADD:
            return 2 * out_el, 0, 4 * out_el
        dw = ins.kind == KIND_DWCONV
        cg = _ceil_div(ins.c, 16)
        kg = _ceil_div(ins.k, 16)
        if ins.dataflow == "C|K":
            if dw:
                imem = ins.b * ins.ox * ins.oy * ins.fx * ins.fy * ins.c
                orf = 4 * out_el * ins.fx * ins.fy
            else:
                imem = (ins.b * ins.ox * ins.oy * ins.fx * ins.fy
                        * ins.c * kg)
                orf = 4 * out_el * ins.fx * ins.fy * cg
            return imem, macs, orf
        if ins.dataflow == "C|FX":
            if dw:
                imem = ins.b * ins.c * ins.oy * ins.fy * ins.ox
                orf = 4 * out_el * ins.fy
            else:
                imem = ins.b * ins.c * ins.oy * ins.fy * ins.ox * ins.k
                orf = 4 * out_el * ins.fy * cg
            return imem, macs, orf
        # fixed OX|C: no multicast, every PE streams its own operands
        orf = 4 * out_el * ins.fx * ins.fy * (1 if dw else cg)
        return macs, macs, orf

    def _slot_for(self, slot: int, vec_len: int, what: str) -> _SlotCfg:
        if slot == 0:
            return _SlotCfg(vec_len, (), None, None, 4)
        cfg = self._slots.get(slot)
        if cfg is None:
            raise MachineError(f"{what}: slot {slot} is not configured")
        if cfg.vec_len != vec_len:
            raise MachineError(
                f"{what}: vec_len {vec_len} does not match slot {slot}"
                f" vec_len {cfg.vec_len}")
        return cfg

    def _exec_store(self, ins: Store, reg: _Region) -> None:
        if reg.last_compute is None:
            raise MachineError("store with no compute in this region")
        cfg = self._slot_for(ins.slot, ins.vec_len, "store")
        rows, vec = ins.n_pix, ins.vec_len
        if vec > self.arch.writeback_entries:
            raise MachineError(
                f"store vec_len {vec} exceeds the write-back buffer "
                f"({self.arch.writeback_entries} entries)")
        if ins.orf_base + rows * vec > self.orf.size:
            raise MachineError(
                f"store: output RF range [{ins.orf_base}, "
                f"{ins.orf_base + rows * vec}) outside 0..{self.orf.size}")

        idx = (ins.orf_base
               + np.arange(rows, dtype=np.int64)[:, None] * vec
               + np.arange(vec))
        block = np.clip(self.orf[idx], _INT32_MIN, _INT32_MAX)
        self._count(LEVEL_OUTPUT_RF, 4 * rows * vec)
        if cfg.ops:
            block = apply_postops(block, cfg.ops, cfg.gamma, cfg.beta)
        if cfg.out_bytes == 1:
            payload = block.astype(np.int8)
        else:
            payload = block.astype("<i4").view(np.int8)
        row_bytes = vec * cfg.out_bytes
        p1 = ins.pitch1 or row_bytes
        p2 = ins.pitch2 or ins.n1 * p1
        offs = (np.arange(ins.n2, dtype=np.int64)[:, None] * p2
                + np.arange(ins.n1, dtype=np.int64)[None, :] * p1).ravel()
        last = int(offs[-1]) + row_bytes
        self._check_span(ins.dst_level, ins.dst_addr, last, "store dst")
        didx = ins.dst_addr + offs[:, None] + np.arange(row_bytes)
        self._mem(ins.dst_level)[didx.ravel()] = \
            payload.reshape(rows, row_bytes).ravel()

        nbytes = rows * row_bytes
        self._count(_LEVEL_NAME[ins.dst_level], nbytes)
        self._log(ins.dst_level, False, ins.dst_addr, nbytes)

        producer = reg.last_compute
        feed = None
        if ins.dst_level == LVL_IMEM:
            target = reg.group(ins.tile)
            if target.idx <= reg.groups[producer].idx:
                raise MachineError(
                    "peer store must feed a later tile group "
                    f"(tile {ins.tile} does not follow tile {producer})")
            target.fill += nbytes
            feed = ins.tile
        elif ins.dst_level == LVL_DRAM:
            reg.group(ins.tile).bus += nbytes
        reg.drains.append(
            _Drain(producer, feed, _LEVEL_NAME[ins.dst_level], nbytes))

    def _exec_postcfg(self, ins: PostCfg, reg: _Region) -> None:
        ops: List[PostOp] = []
        gamma = beta = None
        out_bytes = 4
        for kind, params in ins.ops:
            if kind == "ln":
                om, os_, g_addr, b_addr = params
                n = 4 * ins.vec_len
                self._check_span(LVL_DRAM, g_addr, n, "postcfg gamma")
                self._check_span(LVL_DRAM, b_addr, n, "postcfg beta")
                gamma = self.dram[g_addr:g_addr + n].view("<i4") \
                    .astype(np.int64)
                beta = self.dram[b_addr:b_addr + n].view("<i4") \
                    .astype(np.int64)
                self._count(LEVEL_DRAM, 2 * n)
                self._dram_reads += [(g_addr, n), (b_addr, n)]
                reg.preload_bytes += 2 * n
                ops.append(PostOp(POST_LAYERNORM, (om, os_)))
            else:
                ops.append(PostOp(_POST_KIND[kind], tuple(params)))
            if kind in ("rq", "sm"):
                out_bytes = 1
        self._slots[ins.slot] = _SlotCfg(
            ins.vec_len, tuple(ops), gamma, beta, out_bytes)

    def _exec_postpass(self, ins: PostPass, reg: _Region) -> None:
        cfg = self._slots.get(ins.slot)
        if cfg is None:
            raise MachineError(f"postpass: slot {ins.slot} is not configured")
        vec = cfg.vec_len
        in_b = 4 * ins.n_vec * vec
        out_b = cfg.out_bytes * ins.n_vec * vec
        self._check_span(ins.src_level, ins.src_addr, in_b, "postpass src")
        self._check_span(ins.dst_level, ins.dst_addr, out_b, "postpass dst")
        mat = self._mem(ins.src_level)[ins.src_addr:ins.src_addr + in_b] \
            .view("<i4").reshape(ins.n_vec, vec).astype(np.int64)
        out = apply_postops(mat, cfg.ops, cfg.gamma, cfg.beta)
        if cfg.out_bytes == 1:
            payload = out.astype(np.int8).ravel()
        else:
            payload = out.astype("<i4").view(np.int8).ravel()
        self._mem(ins.dst_level)[ins.dst_addr:ins.dst_addr + out_b] = payload

        self._count(_LEVEL_NAME[ins.src_level], in_b)
        self._count(_LEVEL_NAME[ins.dst_level], out_b)
        self._log(ins.src_level, True, ins.src_addr, in_b)
        self._log(ins.dst_level, False, ins.dst_addr, out_b)
        dram_b = (in_b if ins.src_level == LVL_DRAM else 0) \
            + (out_b if ins.dst_level == LVL_DRAM else 0)
        reg.passes.append((in_b, out_b, dram_b))

    # -- timing ------------------------------------------------------------

    def _resolve_region(self, reg: _Region, t0: int) -> int:
        a = self.arch
        by_producer: Dict[int, List[_Drain]] = {}
        for d in reg.drains:
            by_producer.setdefault(d.producer, []).append(d)

        preload = _ceil_div(reg.preload_bytes, a.dram_bus_bytes_per_cycle)
        if reg.preload_bytes:
            self._trace.append((t0, "bus", "preload", reg.preload_bytes))
        pe = t0 + preload
        cs_prev = ce_prev = pe
        drain_free = t0
        feed: Dict[int, int] = {}
        for i, gid in enumerate(reg.order):
            g = reg.groups[gid]
            xfer = max(_ceil_div(g.bus, a.dram_bus_bytes_per_cycle),
                       _ceil_div(g.fill, a.sram_fill_bytes_per_cycle))
            xs = pe if i == 0 else cs_prev
            cs = max(ce_prev, xs + xfer, feed.get(gid, t0))
            ce = cs + g.waves
            if g.bus:
                self._trace.append((xs, "bus", f"tile {gid}", g.bus))
            if g.fill:
                self._trace.append((xs, "fill", f"tile {gid}", g.fill))
            if g.waves:
                self._trace.append((cs, "array", f"tile {gid}",
                                    g.array_bytes))
            for d in by_producer.get(gid, ()):
                ds = max(drain_free, ce)
                drain_free = ds + _ceil_div(d.nbytes,
                                            a.sram_drain_bytes_per_cycle)
                self._trace.append(
                    (ds, "drain", f"tile {gid} -> {d.level}", d.nbytes))
                if d.feed is not None:
                    feed[d.feed] = max(feed.get(d.feed, 0), drain_free)
            cs_prev, ce_prev = cs, ce
        end = max(ce_prev, drain_free)
        for in_b, out_b, dram_b in reg.passes:
            cyc = (_ceil_div(in_b, a.sram_fill_bytes_per_cycle)
                   + _ceil_div(out_b, a.sram_drain_bytes_per_cycle)
                   + _ceil_div(dram_b, a.dram_bus_bytes_per_cycle))
            self._trace.append((end, "wb", "postpass", in_b + out_b))
            end += cyc
        return end

    # -- driver ------------------------------------------------------------

    def run(self, program) -> RunResult:
        self._bytes: Dict[str, int] = {
            LEVEL_DRAM: 0, LEVEL_SRAM: 0, LEVEL_INPUT_MEM: 0,
            LEVEL_WEIGHT_REGS: 0, LEVEL_OUTPUT_RF: 0}
        self._macs = 0
        self._trace: List[Tuple[int, str, str, int]] = []
        self._dram_reads: List[Tuple[int, int]] = []
        self._dram_writes: List[Tuple[int, int]] = []
        self._sram_reads: List[Tuple[int, int]] = []
        self._sram_writes: List[Tuple[int, int]] = []

        cursor = 0
        region_cycles: List[int] = []
        reg = _Region()
        halted = False

        def close_region():
            nonlocal cursor, reg
            end = self._resolve_region(reg, cursor)
            if reg.n_instr:
                region_cycles.append(end - cursor)
            cursor = end
            if self.max_cycles is not None and cursor > self.max_cycles:
                raise MachineError(
                    f"watchdog: cycle count {cursor} exceeds the cap "
                    f"{self.max_cycles}")
            reg = _Region()

        for ins in program:
            if halted:
                raise MachineError("instructions after halt")
            if isinstance(ins, Halt):
                close_region()
                halted = True
                continue
            if isinstance(ins, Sync):
                close_region()
                continue
            reg.n_instr += 1
            if isinstance(ins, Load):
                self._exec_load(ins, reg)
            elif isinstance(ins, Compute):
                self._exec_compute(ins, reg)
            elif isinstance(ins, Store):
                self._exec_store(ins, reg)
            elif isinstance(ins, PostCfg):
                self._exec_postcfg(ins, reg)
            elif isinstance(ins, PostPass):
                self._exec_postpass(ins, reg)
            else:
                raise MachineError(f"cannot execute {type(ins).__name__}")
        if program and not halted:
            raise MachineError("program has no halt")

        e = self.arch.energy
        per_byte = e.per_byte()
        energy = {"mac": self._macs * e.mac_pj}
        for lvl, nbytes in self._bytes.items():
            energy[lvl] = nbytes * per_byte[lvl]
        return RunResult(
            cycles=cursor, macs=self._macs,
            access_bytes=dict(self._bytes), energy_pj=energy,
            region_cycles=region_cycles, trace=self._trace,
            dram_reads=self._dram_reads, dram_writes=self._dram_writes,
            sram_reads=self._sram_reads, sram_writes=self._sram_writes)
