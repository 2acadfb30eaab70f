"""Analytical latency/energy model of the accelerator.

The model walks the exact tile grid a layer's temporal mapping implies and
accumulates, per tile: array waves, staging traffic into the local
memories, streaming traffic on the shared DRAM bus, and the double-buffer
stall whenever a tile's transfers outrun the previous tile's compute.
Cycle totals split into three parts:

  ideal                 MACs / 256 (every PE busy every cycle)
  spatial underutil     extra waves from unroll mismatch and tails
  temporal stall        weight preloads, transfer bubbles, drains and
                        vector passes

Energy is access-count based: every byte moved at each memory level plus
a per-MAC term, with DRAM fixed at its external per-byte cost and the
on-chip ladder calibrated against the peak-efficiency target (see
calibrate_energy).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .arch import (LEVEL_DRAM, LEVEL_INPUT_MEM, LEVEL_OUTPUT_RF, LEVEL_SRAM,
                   LEVEL_WEIGHT_REGS, ArchConfig)
from .mapping import (DATAFLOW_CFX, DATAFLOW_CK, DATAFLOW_FIXED,
                      MODE_ROW_PROPAGATE, SpatialMapping, TemporalMapping,
                      canonical_mapping, enumerate_temporal_mappings,
                      needs_full_vector, select_dataflow,
                      streaming_consumer_mapping, wave_count)
from .workload import (KIND_ADD, KIND_DWCONV, KIND_GEMM, LayerSpec,
                       NetworkGraph, layer_macs)

__all__ = [
    "CostBreakdown", "NetworkCost", "LayerPlan", "evaluate_layer",
    "vector_pass_cost", "evaluate_network", "plan_residency",
    "search_mapping", "calibrate_energy", "saturating_pw_layer",
    "standard_layer_suite",
]


@dataclass
class CostBreakdown:
    """Cycle and energy account of one layer under one mapping."""

    name: str
    macs: int
    ideal_cycles: int
    spatial_cycles: int
    stall_cycles: int
    access_bytes: Dict[str, int]
    energy_pj: Dict[str, float]
    utilization: float

    @property
    def total_cycles(self) -> int:
        return self.ideal_cycles + self.spatial_cycles + self.stall_cycles

    @property
    def dram_bytes(self) -> int:
        return self.access_bytes.get(LEVEL_DRAM, 0)

    @property
    def total_energy_pj(self) -> float:
        return sum(self.energy_pj.values())

    def merged_with(self, other: "CostBreakdown", name: str) -> "CostBreakdown":
        access = dict(self.access_bytes)
        for lvl, b in other.access_bytes.items():
            access[lvl] = access.get(lvl, 0) + b
        energy = dict(self.energy_pj)
        for k, v in other.energy_pj.items():
            energy[k] = energy.get(k, 0.0) + v
        macs = self.macs + other.macs
        waves = (self.ideal_cycles + self.spatial_cycles
                 + other.ideal_cycles + other.spatial_cycles)
        ideal = -(-macs // 256) if macs else 0
        return CostBreakdown(
            name=name, macs=macs, ideal_cycles=ideal,
            spatial_cycles=waves - ideal,
            stall_cycles=self.stall_cycles + other.stall_cycles,
            access_bytes=access, energy_pj=energy,
            utilization=(macs / (waves * 256)) if waves else 0.0)


# --------------------------------------------------------------------------
# Tile grid helpers.
# --------------------------------------------------------------------------

def _chunks(total: int, size: int) -> List[int]:
    out = [size] * (total // size)
    if total % size:
        out.append(total % size)
    return out


def _pixel_tiles(spec: LayerSpec, tm: TemporalMapping,
                 sm: SpatialMapping) -> List[Tuple[int, int]]:
    """Pixel tiles as (ox, oy) extents.  The scan runs along Y except when
    the dataflow unrolls or propagates along X (row-propagate mode and the
    fixed OX|C baseline), where runs must follow X to keep the array fed."""
    d = spec.dims
    along_x = (sm.mode == MODE_ROW_PROPAGATE
               or sm.dataflow == DATAFLOW_FIXED
               or spec.kind == KIND_GEMM)
    line = d.ox if along_x else d.oy
    n_lines = d.oy if along_x else d.ox
    pix = tm.scheme.pix
    tiles: List[Tuple[int, int]] = []
    if pix <= line:
        runs = _chunks(line, pix)
        for run in runs:
            tiles.append((run, 1) if along_x else (1, run))
        tiles = tiles * n_lines
    else:
        m = max(1, pix // line)
        for rows in _chunks(n_lines, m):
            tiles.append((line, rows) if along_x else (rows, line))
    return tiles


def _window_bytes(spec: LayerSpec, ox_t: int, oy_t: int, c_t: int) -> int:
    if spec.kind == KIND_GEMM:
        return ox_t * oy_t * c_t
    if spec.kind == KIND_ADD:
        return 2 * ox_t * oy_t * c_t
    sx, sy = spec.stride
    wx = (ox_t - 1) * sx + spec.dims.fx
    wy = (oy_t - 1) * sy + spec.dims.fy
    return wx * wy * c_t


@dataclass
class _LayerTraffic:
    """Raw movement counts accumulated over the tile walk."""

    waves: int = 0
    imem_fill: int = 0          # SRAM -> input memory bytes
    wreg_fill: int = 0          # SRAM -> weight register bytes
    imem_read: int = 0          # input memory -> array bytes
    wreg_read: int = 0
    orf_bytes: int = 0          # accumulator read+write bytes
    drain_bytes: int = 0        # write-back output bytes
    sram_bytes: int = 0
    dram_in: int = 0
    dram_w: int = 0
    dram_out: int = 0
    stall: int = 0


def _walk_tiles(spec: LayerSpec, arch: ArchConfig, sm: SpatialMapping,
                tm: TemporalMapping, input_dram_bytes: int,
                weight_dram_bytes: int, output_to_dram: bool,
                out_elem_bytes: int, input_from_peer: bool = False,
                drain_to_peer: bool = False) -> _LayerTraffic:
    d = spec.dims
    t = _LayerTraffic()
    scheme = tm.scheme
    k_total = spec.out_channels
    c_slices = _chunks(d.c, scheme.c)
    if spec.kind == KIND_DWCONV:
        k_slices, n_k = [scheme.c], 1
    else:
        k_slices = _chunks(k_total, scheme.k)
        n_k = len(k_slices)
    pix_tiles = _pixel_tiles(spec, tm, sm)
    pos = {dim: i for i, dim in enumerate(tm.order)}
    k_outside = pos["k"] < pos["pix"] and spec.kind != KIND_DWCONV

    w_bytes = spec.weight_bytes()
    bus = arch.dram_bus_bytes_per_cycle
    fill_rate = arch.sram_fill_bytes_per_cycle
    drain_rate = arch.sram_drain_bytes_per_cycle

    t.dram_w = weight_dram_bytes
    t.dram_in = input_dram_bytes

    # Whether one pixel tile can keep the full reduction extent staged.
    all_c_fits = all(
        _window_bytes(spec, ox, oy, d.c) <= arch.input_mem_bytes
        for ox, oy in pix_tiles)
    w_refetch_per_tile = spec.kind != KIND_ADD and w_bytes > 0 and (
        scheme.c < d.c or
        (not k_outside and n_k > 1 and spec.kind != KIND_DWCONV))

    if spec.kind != KIND_ADD and w_bytes:
        t.wreg_fill = w_bytes * (len(pix_tiles) if w_refetch_per_tile else 1)

    prev_compute = 0
    n_pix = len(pix_tiles)
    total_pix = _pixels_total(spec)
    passes_per_tile = n_k if (k_outside or not all_c_fits) else 1

    for idx, (ox_t, oy_t) in enumerate(pix_tiles):
        if all_c_fits:
            fill = _window_bytes(spec, ox_t, oy_t, d.c) * passes_per_tile
        else:
            fill = sum(_window_bytes(spec, ox_t, oy_t, cs)
                       for cs in c_slices) * passes_per_tile
        fill *= d.b
        t.imem_fill += fill
        wfill_tile = 0
        if spec.kind != KIND_ADD and w_bytes:
            wfill_tile = w_bytes if (w_refetch_per_tile or idx == 0) else 0

        tile_waves = 0
        for ks in k_slices:
            for cs in c_slices:
                tile_waves += wave_count(
                    spec, sm,
                    dims={"ox": ox_t, "oy": oy_t, "k": ks, "c": cs, "b": d.b})
        t.waves += tile_waves

        pix_elems = ox_t * oy_t * d.b
        out_tile = pix_elems * k_total * out_elem_bytes
        t.drain_bytes += out_tile

        dram_tile = input_dram_bytes * pix_elems // (total_pix * d.b)
        if output_to_dram:
            dram_tile += out_tile
            t.dram_out += out_tile

        load_cycles = math.ceil((fill + wfill_tile) / fill_rate)
        bus_cycles = math.ceil(dram_tile / bus)
        drain_cycles = math.ceil(out_tile / drain_rate)
        if idx == 0:
            t.stall += max(load_cycles, bus_cycles)
        else:
            t.stall += max(0, max(load_cycles, bus_cycles) - prev_compute)
        prev_compute = tile_waves
        if idx == n_pix - 1:
            t.stall += drain_cycles     # final drain tail

    t.imem_read, t.wreg_read, t.orf_bytes = _array_side_bytes(spec, sm, tm)

    # SRAM traffic.  Bus-fed operands stream straight into the local
    # memories and bypass the scratchpad; SRAM pays only for resident
    # operands, for staging copies that will be re-read (weight refetch,
    # multi-pass input revisits) and for halo excess over the stream.
    # Scratchpad traffic per operand: bus-fed bytes go straight into the
    # local memories, with a staging copy written on first touch only if
    # the operand is revisited; revisits then read from the scratchpad.
    # The staging write plus the re-reads always sum to the fill total.
    if input_from_peer:
        sram_in = 0
    elif input_dram_bytes == 0:
        sram_in = t.imem_fill
    elif passes_per_tile == 1:
        sram_in = max(0, t.imem_fill - input_dram_bytes)
    else:
        sram_in = t.imem_fill
    if w_refetch_per_tile:
        sram_w = t.wreg_fill
    else:
        sram_w = max(0, t.wreg_fill - weight_dram_bytes)
    if output_to_dram or drain_to_peer:
        sram_out = 0
    else:
        sram_out = t.drain_bytes
    t.sram_bytes = sram_in + sram_w + sram_out
    return t


def _pixels_total(spec: LayerSpec) -> int:
    return spec.dims.ox * spec.dims.oy


def _array_side_bytes(spec: LayerSpec, sm: SpatialMapping,
                      tm: TemporalMapping) -> Tuple[int, int, int]:
    """(input mem reads, weight register reads, output RF traffic).

    The output RF supports in-place accumulate, so one partial-sum update
    is a single 4-byte port transaction; the drain readout adds one more
    per output element.
    """
    d = spec.dims
    macs = layer_macs(spec)
    out_elems = spec.out_elements()
    if spec.kind == KIND_ADD:
        return 2 * out_elems, 0, 8 * out_elems

    if spec.kind == KIND_DWCONV:
        k_groups = 1
        c_groups = 1
    else:
        k_groups = sum(-(-ks // 16) for ks in _chunks(spec.out_channels,
                                                      tm.scheme.k))
        c_groups = sum(-(-cs // 16) for cs in _chunks(d.c, tm.scheme.c))

    if sm.dataflow == DATAFLOW_CK:
        if spec.kind == KIND_DWCONV:
            imem = d.b * d.ox * d.oy * d.fx * d.fy * d.c
            orf = out_elems * 4 * (d.fx * d.fy + 1)
        else:
            imem = d.b * d.ox * d.oy * d.fx * d.fy * d.c * k_groups
            orf = out_elems * 4 * (d.fx * d.fy * c_groups + 1)
        return imem, macs, orf
    if sm.dataflow == DATAFLOW_CFX:
        if spec.kind == KIND_DWCONV:
            imem = d.b * d.c * d.oy * d.fy * d.ox
            orf = out_elems * 4 * (d.fy + 1)
        else:
            imem = d.b * d.c * d.oy * d.fy * d.ox * d.k
            orf = out_elems * 4 * (d.fy * c_groups + 1)
        return imem, macs, orf
    # Fixed OX|C baseline: inputs are not multicast along a reduction row,
    # every PE streams its own operand byte per MAC.
    if spec.kind == KIND_DWCONV:
        return macs, macs, out_elems * 4 * (d.fx * d.fy + 1)
    return macs, macs, out_elems * 4 * (d.fx * d.fy * c_groups + 1)


# --------------------------------------------------------------------------
# Layer evaluation.
# --------------------------------------------------------------------------

def evaluate_layer(spec: LayerSpec, arch: ArchConfig,
                   sm: Optional[SpatialMapping] = None,
                   tm: Optional[TemporalMapping] = None,
                   input_dram_bytes: Optional[int] = None,
                   weight_dram_bytes: Optional[int] = None,
                   output_to_dram: bool = True,
                   out_elem_bytes: Optional[int] = None,
                   input_from_peer: bool = False,
                   drain_to_peer: bool = False) -> CostBreakdown:
    """Cycle/energy breakdown of one layer under one mapping.

    The DRAM byte arguments say how much of each operand actually crosses
    the bus (None means the whole operand); the rest is assumed SRAM
    resident.  ``out_elem_bytes`` overrides the produced element width
    (4 when post-processing is deferred to a separate pass).  The peer
    flags model depth-first pairing: tiles handed from one layer's
    write-back straight into the next layer's input memories skip the
    scratchpad entirely.
    """

    sm = sm or select_dataflow(spec)
    tm = tm or canonical_mapping(spec, arch, sm)
    if out_elem_bytes is None:
        out_elem_bytes = spec.out_bits() // 8
    if input_dram_bytes is None:
        input_dram_bytes = spec.in_bytes()
    if weight_dram_bytes is None:
        weight_dram_bytes = spec.weight_bytes()

    t = _walk_tiles(spec, arch, sm, tm, input_dram_bytes, weight_dram_bytes,
                    output_to_dram, out_elem_bytes,
                    input_from_peer=input_from_peer,
                    drain_to_peer=drain_to_peer)
    macs = layer_macs(spec)
    ideal = -(-macs // 256) if macs else 0
    spatial = t.waves - ideal

    # Weight preload from DRAM happens up front on the shared bus and is
    # not hidden behind compute of the same layer.
    preload = math.ceil(t.dram_w / arch.dram_bus_bytes_per_cycle)
    stall = t.stall + preload

    dram_bytes = t.dram_in + t.dram_w + t.dram_out
    # Output RF: the first partial write needs no read and the drain
    # readout replaces the last one, so updates*8 covers the whole life.
    access = {
        LEVEL_DRAM: dram_bytes,
        LEVEL_SRAM: t.sram_bytes,
        LEVEL_INPUT_MEM: t.imem_read + t.imem_fill,
        LEVEL_WEIGHT_REGS: t.wreg_read + t.wreg_fill,
        LEVEL_OUTPUT_RF: t.orf_bytes,
    }
    e = arch.energy
    energy = {
        "mac": macs * e.mac_pj,
        LEVEL_WEIGHT_REGS: access[LEVEL_WEIGHT_REGS] * e.weight_regs_pj,
        LEVEL_INPUT_MEM: access[LEVEL_INPUT_MEM] * e.input_mem_pj,
        LEVEL_OUTPUT_RF: access[LEVEL_OUTPUT_RF] * e.output_rf_pj,
        LEVEL_SRAM: access[LEVEL_SRAM] * e.sram_pj,
        LEVEL_DRAM: access[LEVEL_DRAM] * e.dram_pj,
    }
    util = macs / (t.waves * 256) if t.waves else 0.0
    return CostBreakdown(
        name=spec.name, macs=macs, ideal_cycles=ideal,
        spatial_cycles=spatial, stall_cycles=stall,
        access_bytes=access, energy_pj=energy, utilization=util)


def vector_pass_cost(name: str, elems: int, arch: ArchConfig,
                     io_in_dram: bool,
                     in_elem_bytes: int = 4,
                     out_elem_bytes: int = 1) -> CostBreakdown:
    """A post-processing pass executed standalone: the tensor streams
    through the vector path at port width with no array work."""
    in_b = elems * in_elem_bytes
    out_b = elems * out_elem_bytes
    cycles = math.ceil(in_b / arch.sram_fill_bytes_per_cycle) + \
        math.ceil(out_b / arch.sram_drain_bytes_per_cycle)
    dram = (in_b + out_b) if io_in_dram else 0
    sram = 0 if io_in_dram else in_b + out_b
    cycles += math.ceil(dram / arch.dram_bus_bytes_per_cycle)
    e = arch.energy
    access = {LEVEL_DRAM: dram, LEVEL_SRAM: sram,
              LEVEL_INPUT_MEM: 0, LEVEL_WEIGHT_REGS: 0, LEVEL_OUTPUT_RF: 0}
    energy = {
        "mac": 0.0,
        LEVEL_WEIGHT_REGS: 0.0, LEVEL_INPUT_MEM: 0.0, LEVEL_OUTPUT_RF: 0.0,
        LEVEL_SRAM: sram * e.sram_pj,
        LEVEL_DRAM: dram * e.dram_pj,
    }
    return CostBreakdown(name=name, macs=0, ideal_cycles=0, spatial_cycles=0,
                         stall_cycles=cycles, access_bytes=access,
                         energy_pj=energy, utilization=0.0)


# --------------------------------------------------------------------------
# Mapping search.
# --------------------------------------------------------------------------

def search_mapping(spec: LayerSpec, arch: ArchConfig,
                   sm: Optional[SpatialMapping] = None,
                   objective: str = "edp",
                   limit: int = 512) -> Tuple[TemporalMapping, CostBreakdown]:
    """Pick the best temporal mapping under the objective.

    Objectives: 'latency' (cycles), 'energy' (pJ) or 'edp' (their
    product).  Deterministic: ties break toward the first enumerated.
    """

    if objective not in ("latency", "energy", "edp"):
        raise ValueError(f"unknown objective '{objective}'")
    sm = sm or select_dataflow(spec)
    best: Optional[Tuple[float, TemporalMapping, CostBreakdown]] = None
    for tm in enumerate_temporal_mappings(spec, arch, sm, limit=limit):
        cost = evaluate_layer(spec, arch, sm, tm)
        score = {
            "latency": float(cost.total_cycles),
            "energy": cost.total_energy_pj,
            "edp": float(cost.total_cycles) * cost.total_energy_pj,
        }[objective]
        if best is None or score < best[0]:
            best = (score, tm, cost)
    if best is None:
        raise ValueError(f"{spec.name}: no legal mapping found")
    return best[1], best[2]


# --------------------------------------------------------------------------
# Network evaluation.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerPlan:
    """Scheduling decisions behind one cost row, recorded so a program
    generator can reproduce exactly what the evaluator priced: the
    mappings picked, how much of each operand streams from DRAM, and
    whether the row is a fused pair (parked or streamed) or a layer with
    a deferred vector pass."""

    names: Tuple[str, ...]                  # (layer,) or (expand, project)
    sms: Tuple[SpatialMapping, ...]
    tms: Tuple[TemporalMapping, ...]
    input_dram_bytes: Tuple[int, ...]
    weight_dram_bytes: Tuple[int, ...]
    output_to_dram: bool
    fused_pair: bool = False
    streamed: bool = False                  # pair handed over tile by tile
    deferred_pass: bool = False             # raw 32-bit output + vector pass


@dataclass
class NetworkCost:
    """Whole-network roll-up plus per-layer details."""

    layers: List[CostBreakdown]
    routing: Dict[str, str]                 # tensor name -> 'sram' | 'dram'
    dram_by_class: Dict[str, int]           # weights / ib_intermediate / activation
    arch: ArchConfig
    fused_pairs: List[str] = field(default_factory=list)
    plans: List[LayerPlan] = field(default_factory=list)

    @property
    def total_cycles(self) -> int:
        return sum(c.total_cycles for c in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(c.macs for c in self.layers)

    @property
    def dram_bytes(self) -> int:
        return sum(c.dram_bytes for c in self.layers)

    @property
    def total_energy_pj(self) -> float:
        return sum(c.total_energy_pj for c in self.layers)

    @property
    def dram_energy_pj(self) -> float:
        return sum(c.energy_pj[LEVEL_DRAM] for c in self.layers)

    @property
    def chip_energy_pj(self) -> float:
        return self.total_energy_pj - self.dram_energy_pj

    @property
    def latency_s(self) -> float:
        return self.total_cycles / self.arch.clock_hz

    @property
    def fps(self) -> float:
        return 1.0 / self.latency_s if self.total_cycles else 0.0

    @property
    def chip_power_w(self) -> float:
        # Access-count energy over execution time; DRAM device energy is
        # reported separately, matching chip-level power figures.
        if not self.total_cycles:
            return 0.0
        return self.chip_energy_pj * 1e-12 / self.latency_s

    @property
    def fps_per_w(self) -> float:
        p = self.chip_power_w
        return self.fps / p if p else 0.0

    def summary(self) -> Dict[str, float]:
        return {
            "cycles": float(self.total_cycles),
            "macs": float(self.total_macs),
            "latency_ms": self.latency_s * 1e3,
            "fps": self.fps,
            "dram_bytes": float(self.dram_bytes),
            "dram_energy_pj": self.dram_energy_pj,
            "chip_energy_pj": self.chip_energy_pj,
            "total_energy_pj": self.total_energy_pj,
            "dram_energy_share": (self.dram_energy_pj / self.total_energy_pj
                                  if self.total_energy_pj else 0.0),
            "chip_power_mw": self.chip_power_w * 1e3,
            "fps_per_w": self.fps_per_w,
        }


def plan_residency(graph: NetworkGraph, arch: ArchConfig,
                   working_reserve: int = 64 * 1024) -> Dict[str, str]:
    """Decide which activation edges stay in SRAM between layers.

    Greedy liveness walk over the schedule: an edge is SRAM-resident when
    it fits the per-edge limit and the live resident set stays inside the
    SRAM budget left after the streaming working set.  Tensors produced by
    the expand half of an inverted-bottleneck pair always stream: they are
    the fusion opportunity, and the unfused baseline by definition spills
    them.  An elementwise add overwrites its first operand's slot, so it
    adds no pressure of its own.
    """

    budget = arch.sram_bytes - working_reserve
    routing: Dict[str, str] = {}
    last_use: Dict[str, int] = {}
    for i, spec in enumerate(graph.layers):
        for ref in spec.inputs + ([spec.weight_input] if spec.weight_input else []):
            last_use[ref] = i
    ib_intermediates = {roles["expand"].name
                        for roles in graph.ib_pairs().values()}

    live: Dict[str, int] = {}
    for tensor in graph.inputs:
        routing[tensor.name] = "dram"
    for i, spec in enumerate(graph.layers):
        inplace = 0
        if spec.kind == KIND_ADD and spec.inputs[0] in live \
                and last_use.get(spec.inputs[0]) == i:
            inplace = live[spec.inputs[0]]
        for name in [n for n in live if last_use.get(n, -1) <= i]:
            live.pop(name)
        size = spec.out_bytes()
        resident = (size <= arch.resident_edge_limit_bytes
                    and spec.name not in ib_intermediates
                    and sum(live.values()) + max(size - inplace, 0) <= budget
                    and last_use.get(spec.name, i) > i)
        if resident:
            routing[spec.name] = "sram"
            live[spec.name] = size
        else:
            routing[spec.name] = "dram"
    return routing


def evaluate_network(graph: NetworkGraph, arch: ArchConfig,
                     policy: str = "reconfigurable",
                     fuse_postops: bool = True,
                     fusion_plans: Optional[Dict[str, object]] = None,
                     routing: Optional[Dict[str, str]] = None) -> NetworkCost:
    """Evaluate every layer in schedule order and roll the costs up.

    ``fuse_postops=False`` models a write-back path without the pixelwise
    ordering: layernorm/softmax layers emit raw 32-bit data and a
    standalone vector pass re-reads it.  ``fusion_plans`` maps
    inverted-bottleneck pair ids to plans from :mod:`vitaccel.fusion`;
    feasible pairs keep their intermediate tensor entirely on chip.
    """

    routing = dict(routing or plan_residency(graph, arch))
    fusion_plans = fusion_plans or {}
    pairs = graph.ib_pairs()
    fused_expand: Dict[str, str] = {}
    fused_project: Dict[str, str] = {}
    for pair_id, plan in fusion_plans.items():
        if getattr(plan, "feasible", False):
            fused_expand[pairs[pair_id]["expand"].name] = pair_id
            fused_project[pairs[pair_id]["project"].name] = pair_id
    ib_intermediates = {roles["expand"].name for roles in pairs.values()}

    results: List[CostBreakdown] = []
    plans: List[LayerPlan] = []
    dram_by_class = {"weights": 0, "ib_intermediate": 0, "activation": 0}
    pending_pair: Dict[str, Tuple[LayerSpec, int, int]] = {}

    def bucket_of(name: str) -> str:
        return "ib_intermediate" if name in ib_intermediates else "activation"

    def input_dram(spec: LayerSpec) -> int:
        total = 0
        for ref in spec.inputs:
            if routing.get(ref, "dram") != "dram":
                continue
            b = graph.producer_bytes(ref)
            total += b
            dram_by_class[bucket_of(ref)] += b
        return total

    for spec in graph.layers:
        sm = select_dataflow(spec, policy)
        needs_vec = needs_full_vector(spec)
        fused_here = (fuse_postops and needs_vec
                      and spec.out_channels <= arch.writeback_entries)
        out_dram = routing.get(spec.name, "dram") == "dram"
        w_dram = spec.weight_bytes()
        if spec.weight_input is not None:
            w_dram = (graph.producer_bytes(spec.weight_input)
                      if routing.get(spec.weight_input, "dram") == "dram" else 0)
            if w_dram:
                dram_by_class[bucket_of(spec.weight_input)] += w_dram
        elif w_dram:
            dram_by_class["weights"] += w_dram

        if spec.name in fused_expand:
            pending_pair[fused_expand[spec.name]] = (
                spec, input_dram(spec), w_dram)
            continue

        if spec.name in fused_project:
            # Whole pair is costed here.  The intermediate never leaves
            # the chip; the scheduler picks between parking its tiles in
            # the scratchpad and streaming them write-back to input
            # memory, which trades weight re-staging on the project side.
            pair_id = fused_project[spec.name]
            exp, exp_in_d, exp_w = pending_pair.pop(pair_id)
            exp_sm = select_dataflow(exp, policy)
            exp_tm = canonical_mapping(exp, arch, exp_sm)

            def pair_cost(streamed: bool,
                          proj_tm: TemporalMapping) -> CostBreakdown:
                head = evaluate_layer(exp, arch, exp_sm, exp_tm,
                                      input_dram_bytes=exp_in_d,
                                      weight_dram_bytes=exp_w,
                                      output_to_dram=False,
                                      drain_to_peer=streamed)
                tail = evaluate_layer(spec, arch, sm, proj_tm,
                                      input_dram_bytes=0,
                                      weight_dram_bytes=w_dram,
                                      output_to_dram=out_dram,
                                      input_from_peer=streamed)
                return head.merged_with(tail, f"ib:{pair_id}")

            proj_tm = canonical_mapping(spec, arch, sm)
            cost = pair_cost(False, proj_tm)
            streamed_pair = False
            stream_tm = streaming_consumer_mapping(spec, arch, sm)
            if stream_tm is not None:
                alt = pair_cost(True, stream_tm)
                if (alt.total_energy_pj, alt.total_cycles) < \
                        (cost.total_energy_pj, cost.total_cycles):
                    cost, proj_tm, streamed_pair = alt, stream_tm, True
            if out_dram:
                dram_by_class[bucket_of(spec.name)] += spec.out_bytes()
            results.append(cost)
            plans.append(LayerPlan(
                names=(exp.name, spec.name), sms=(exp_sm, sm),
                tms=(exp_tm, proj_tm),
                input_dram_bytes=(exp_in_d, 0),
                weight_dram_bytes=(exp_w, w_dram),
                output_to_dram=out_dram,
                fused_pair=True, streamed=streamed_pair))
            continue

        in_d = input_dram(spec)
        deferred = needs_vec and not fused_here
        if deferred:
            tm = canonical_mapping(spec, arch, sm, force_pixelwise=False)
            cost = evaluate_layer(spec, arch, sm, tm,
                                  input_dram_bytes=in_d,
                                  weight_dram_bytes=w_dram,
                                  output_to_dram=out_dram,
                                  out_elem_bytes=4)
            vec = vector_pass_cost(f"{spec.name}:postpass",
                                   spec.out_elements(), arch,
                                   io_in_dram=out_dram)
            cost = cost.merged_with(vec, spec.name)
            if out_dram:
                # Raw 32-bit write by the layer, raw read plus final
                # narrow write by the pass.
                dram_by_class[bucket_of(spec.name)] += \
                    spec.out_elements() * (4 + 4 + 1)
        else:
            tm = canonical_mapping(spec, arch, sm,
                                   force_pixelwise=True if fused_here else None)
            cost = evaluate_layer(spec, arch, sm, tm,
                                  input_dram_bytes=in_d,
                                  weight_dram_bytes=w_dram,
                                  output_to_dram=out_dram)
            if out_dram:
                dram_by_class[bucket_of(spec.name)] += spec.out_bytes()
        results.append(cost)
        plans.append(LayerPlan(
            names=(spec.name,), sms=(sm,), tms=(tm,),
            input_dram_bytes=(in_d,), weight_dram_bytes=(w_dram,),
            output_to_dram=out_dram, deferred_pass=deferred))

    return NetworkCost(layers=results, routing=routing,
                       dram_by_class=dram_by_class, arch=arch,
                       fused_pairs=sorted(set(fused_expand.values())),
                       plans=plans)


# --------------------------------------------------------------------------
# Calibration.
# --------------------------------------------------------------------------

def saturating_pw_layer(channels: int = 256, pixels: int = 1024) -> LayerSpec:
    """A pointwise layer that keeps every PE busy: C = K = channels."""
    from .workload import KIND_PW, LayerDims, PostOp, requant_params_for
    side = int(math.sqrt(pixels))
    return LayerSpec(
        name="peak_pw", kind=KIND_PW,
        dims=LayerDims(k=channels, c=channels, ox=side, oy=side),
        inputs=["x"],
        post_ops=[PostOp("rq", requant_params_for(channels))])


def calibrate_energy(arch: ArchConfig, target_tops_per_w: float = 1.39,
                     ) -> Tuple[ArchConfig, Dict[str, float]]:
    """Scale the on-chip energy ladder to hit the peak-efficiency target.

    The saturating pointwise layer runs entirely from SRAM, so the target
    pins mac plus on-chip access energy (two int8 ops per MAC); ops per pJ
    is numerically TOPS/W.  DRAM cost stays at its fixed external value.
    Returns the recalibrated config and a report of the achieved point.
    """

    if target_tops_per_w <= 0:
        raise ValueError("target must be positive")
    spec = saturating_pw_layer()
    cost = evaluate_layer(spec, arch, input_dram_bytes=0,
                          weight_dram_bytes=0, output_to_dram=False)
    ops = 2 * cost.macs
    e1 = cost.total_energy_pj - cost.energy_pj[LEVEL_DRAM]
    # On-chip energy is linear in the ladder scale; solve directly.
    unit = e1 / arch.energy.mac_pj
    scale = ops / (target_tops_per_w * unit)
    calibrated = arch.with_energy(
        arch.energy.scaled(scale / arch.energy.mac_pj))
    check = evaluate_layer(spec, calibrated, input_dram_bytes=0,
                           weight_dram_bytes=0, output_to_dram=False)
    achieved = ops / check.total_energy_pj
    peak_power_w = (check.total_energy_pj * 1e-12
                    / (check.total_cycles / arch.clock_hz))
    report = {
        "scale": scale / arch.energy.mac_pj,
        "achieved_tops_per_w": achieved,
        "peak_power_mw": peak_power_w * 1e3,
        "macs_per_cycle": cost.macs / cost.total_cycles,
    }
    return calibrated, report


def standard_layer_suite() -> List[LayerSpec]:
    """Representative single layers used for model-vs-simulator checks."""
    from .workload import (KIND_CONV, KIND_PW, LayerDims, PostOp,
                           requant_params_for)

    def rq(n):
        return PostOp("rq", requant_params_for(n))

    return [
        LayerSpec("suite_conv3", KIND_CONV,
                  LayerDims(k=32, c=16, ox=16, oy=16, fx=3, fy=3), ["x"],
                  pad=(1, 1), post_ops=[rq(16 * 9)]),
        LayerSpec("suite_conv_stem", KIND_CONV,
                  LayerDims(k=48, c=3, ox=32, oy=32, fx=4, fy=4), ["x"],
                  stride=(4, 4), post_ops=[rq(48)]),
        LayerSpec("suite_dw3", KIND_DWCONV,
                  LayerDims(c=96, ox=28, oy=28, fx=3, fy=3), ["x"],
                  pad=(1, 1), post_ops=[rq(9)]),
        LayerSpec("suite_dw7", KIND_DWCONV,
                  LayerDims(c=160, ox=16, oy=16, fx=7, fy=7), ["x"],
                  pad=(3, 3), post_ops=[rq(49)]),
        LayerSpec("suite_pw_expand", KIND_PW,
                  LayerDims(k=192, c=48, ox=32, oy=32), ["x"],
                  post_ops=[PostOp("act", ("relu",)), rq(48)]),
        LayerSpec("suite_pw_project", KIND_PW,
                  LayerDims(k=48, c=192, ox=32, oy=32), ["x"],
                  post_ops=[rq(192)]),
        LayerSpec("suite_pw_ln", KIND_PW,
                  LayerDims(k=96, c=96, ox=16, oy=16), ["x"],
                  post_ops=[PostOp("ln", (30, 16)), rq(96)]),
        LayerSpec("suite_gemm", KIND_GEMM,
                  LayerDims(b=8, k=20, c=256, ox=20), ["x"],
                  post_ops=[rq(256)]),
        LayerSpec("suite_add", KIND_ADD,
                  LayerDims(c=96, ox=28, oy=28), ["x", "y"],
                  post_ops=[rq(2)]),
        saturating_pw_layer(),
    ]
