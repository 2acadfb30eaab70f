"""Spatial dataflows and temporal mappings for the 16x16 PE array.

Spatial side: the array runs in one of two hardware configurations.  In
adder-tree mode a reduction dimension is unrolled across the 16 rows and an
output dimension across the 16 columns; each column folds its rows through
an adder tree into one 32-bit accumulator per cycle.  In row-propagate mode
each row works on an independent channel while partial results shift along
the row across the filter-X taps, which suits depthwise convolutions.  A
third, fixed OX|C assignment is modeled for baseline comparisons only (it
is how a non-reconfigurable design would lay out the same loops).

Temporal side: a mapping is a tile scheme (pixel run, output-channel tile,
reduction tile) plus the order of the three tile loops.  Pixel runs follow
an X-major scan; when the write-back path must see the full channel vector
of each pixel (fused layernorm/softmax statistics) the channel loops sit
innermost, one pixel at a time - the pixelwise ordering.
"""

import itertools
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

from .arch import ArchConfig
from .workload import (KIND_ADD, KIND_CONV, KIND_DWCONV, KIND_GEMM, KIND_PW,
                       POST_LAYERNORM, POST_SOFTMAX, LayerSpec, layer_macs)

__all__ = [
    "DATAFLOW_FIXED", "DATAFLOW_CK", "DATAFLOW_CFX",
    "MODE_ADDER_TREE", "MODE_ROW_PROPAGATE",
    "SpatialMapping", "TileScheme", "TemporalMapping",
    "select_dataflow", "wave_count", "spatial_utilization",
    "pixelwise_order", "canonical_mapping", "enumerate_temporal_mappings",
    "needs_full_vector", "streaming_consumer_mapping",
]

DATAFLOW_FIXED = "OX|C"
DATAFLOW_CK = "C|K"
DATAFLOW_CFX = "C|FX"

MODE_ADDER_TREE = "adder_tree"
MODE_ROW_PROPAGATE = "row_propagate"


@dataclass(frozen=True)
class SpatialMapping:
    """Which loop dimensions are unrolled across the array."""

    dataflow: str

    @property
    def mode(self) -> str:
        if self.dataflow == DATAFLOW_CFX:
            return MODE_ROW_PROPAGATE
        return MODE_ADDER_TREE

    def __str__(self) -> str:
        return self.dataflow


def select_dataflow(spec: LayerSpec, policy: str = "reconfigurable") -> SpatialMapping:
    """Pick the spatial mapping for a layer under the given array policy.

    'reconfigurable' switches the array per layer: C|FX for depthwise
    layers, C|K for everything with a cross-channel reduction.  'fixed'
    pins the baseline OX|C assignment for every layer, which forces
    depthwise work onto the array diagonal.
    """

    if policy == "reconfigurable":
        if spec.kind == KIND_DWCONV:
            return SpatialMapping(DATAFLOW_CFX)
        return SpatialMapping(DATAFLOW_CK)
    if policy == "fixed":
        return SpatialMapping(DATAFLOW_FIXED)
    raise ValueError(f"unknown dataflow policy '{policy}'")


def needs_full_vector(spec: LayerSpec) -> bool:
    """True when fused post-processing needs each pixel's whole channel
    vector in the write-back line buffer before any value can drain."""
    return spec.has_post(POST_LAYERNORM) or spec.has_post(POST_SOFTMAX)


# --------------------------------------------------------------------------
# Wave accounting.
#
# A wave is one array-wide step: every active PE performs one MAC.  The
# formulas below are the microarchitectural contract shared by the cost
# model and the simulator; both derive their cycle counts from the same
# per-tile wave counts so the two cannot disagree about raw compute time.
# --------------------------------------------------------------------------

def _groups(extent: int, lanes: int = 16) -> int:
    return -(-extent // lanes)


def wave_count(spec: LayerSpec, sm: SpatialMapping,
               dims: Optional[dict] = None, include_fill: bool = True) -> int:
    """Number of array waves to execute the given (sub-)layer extents.

    ``dims`` overrides individual loop extents (used for tiles).  For
    row-propagate mode each row pass spends fx-1 extra cycles priming the
    propagation chain; ``include_fill=False`` returns the steady-state
    count used for utilization bookkeeping.
    """

    d = spec.dims.as_dict()
    if dims:
        d.update(dims)
    b, k, c = d["b"], d["k"], d["c"]
    ox, oy, fx, fy = d["ox"], d["oy"], d["fx"], d["fy"]

    if spec.kind == KIND_ADD:
        # Vector pass: 16 lanes per cycle regardless of array mode.
        return _groups(b * c * ox * oy)

    if sm.dataflow == DATAFLOW_CK:
        if spec.kind == KIND_DWCONV:
            # Only the diagonal PEs contribute: 16 channels per wave.
            return b * ox * oy * fx * fy * _groups(c)
        return b * ox * oy * fx * fy * _groups(c) * _groups(k)

    if sm.dataflow == DATAFLOW_CFX:
        fill = (fx - 1) if include_fill else 0
        passes = b * _groups(c) * oy * fy * (ox + fill)
        if spec.kind == KIND_DWCONV:
            return passes
        # Cross-channel kernels decompose into per-output-channel passes.
        return k * passes

    if sm.dataflow == DATAFLOW_FIXED:
        if spec.kind == KIND_DWCONV:
            # C maps to both axes, so only the diagonal is ever active.
            return b * ox * oy * fx * fy * _groups(c)
        return b * fx * fy * k * oy * _groups(ox) * _groups(c)

    raise ValueError(f"unknown dataflow '{sm.dataflow}'")


def spatial_utilization(spec: LayerSpec, sm: SpatialMapping) -> float:
    """Average fraction of the 256 PEs doing useful MACs per steady wave."""
    macs = layer_macs(spec)
    if macs == 0:
        return 0.0
    waves = wave_count(spec, sm, include_fill=False)
    return macs / (waves * 256)


# --------------------------------------------------------------------------
# Temporal mappings.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TileScheme:
    """Inner tile sizes: a pixel run along the X-major scan, an
    output-channel tile and a reduction-channel tile."""

    pix: int
    k: int
    c: int


@dataclass(frozen=True)
class TemporalMapping:
    """Tile loop order (outer to inner) over ('pix', 'k', 'c') plus sizes.

    ``pixelwise`` marks the ordering where both channel loops run inside
    the pixel loop, so each output pixel's full channel vector is ready in
    the write-back buffer before the next pixel starts.
    """

    order: Tuple[str, str, str]
    scheme: TileScheme
    pixelwise: bool = False

    def trip_counts(self, spec: LayerSpec) -> Tuple[int, ...]:
        pix_total = _pixels(spec)
        k_total = _out_ch(spec)
        c_total = spec.dims.c
        per = {"pix": -(-pix_total // self.scheme.pix),
               "k": -(-k_total // self.scheme.k),
               "c": -(-c_total // self.scheme.c)}
        return tuple(per[dim] for dim in self.order)

    def encode(self) -> str:
        flag = "+pixelwise" if self.pixelwise else ""
        return (f"{'>'.join(self.order)}:pix{self.scheme.pix}"
                f":k{self.scheme.k}:c{self.scheme.c}{flag}")


def _pixels(spec: LayerSpec) -> int:
    return spec.dims.ox * spec.dims.oy


def _out_ch(spec: LayerSpec) -> int:
    return spec.out_channels


def _divisors(n: int) -> List[int]:
    out = [d for d in range(1, n + 1) if n % d == 0]
    return out


def _tile_candidates(extent: int, cap: Optional[int] = None) -> List[int]:
    """Power-of-two sizes and exact divisors, ascending, bounded by cap."""
    vals = set(_divisors(extent))
    p = 1
    while p < extent:
        vals.add(p)
        p *= 2
    vals.add(extent)
    out = sorted(v for v in vals if cap is None or v <= cap)
    return out or [1]


def _pix_candidates(spec: LayerSpec, cap: Optional[int] = None) -> List[int]:
    """Pixel runs that never straddle a scan column: divisors of the column
    height, or whole-column multiples that divide the full scan."""
    d = spec.dims
    col = d.oy if spec.kind != KIND_GEMM else 1
    total = _pixels(spec)
    vals = set(_divisors(col))
    for m in _divisors(total // col):
        vals.add(m * col)
    out = sorted(v for v in vals if cap is None or v <= cap)
    return out or [1]


def _input_window_bytes(spec: LayerSpec, pix: int, c_tile: int) -> int:
    """Bytes staged into the input memory for one pixel-run tile."""
    d = spec.dims
    sx, sy = spec.stride
    if spec.kind == KIND_GEMM:
        return pix * c_tile
    if spec.kind == KIND_ADD:
        return 2 * pix * c_tile
    col = d.oy
    if pix <= col:
        wx = d.fx
        wy = (pix - 1) * sy + d.fy
    else:
        cols = -(-pix // col)
        wx = (cols - 1) * sx + d.fx
        wy = (col - 1) * sy + d.fy
    return wx * wy * c_tile


def _weight_tile_bytes(spec: LayerSpec, k_tile: int, c_tile: int) -> int:
    d = spec.dims
    if spec.kind == KIND_DWCONV:
        return c_tile * d.fx * d.fy
    if spec.kind == KIND_ADD:
        return 0
    if spec.kind == KIND_PW or spec.kind == KIND_GEMM:
        return k_tile * c_tile
    return k_tile * c_tile * d.fx * d.fy


def _legal(spec: LayerSpec, arch: ArchConfig, tm: TemporalMapping) -> bool:
    s = tm.scheme
    d = spec.dims
    k_total, c_total = _out_ch(spec), d.c
    if spec.kind == KIND_DWCONV and s.k != s.c:
        return False
    if _input_window_bytes(spec, s.pix, s.c) > arch.input_mem_bytes:
        return False
    if _weight_tile_bytes(spec, s.k, s.c) > arch.weight_reg_bytes_total:
        return False
    if s.pix * s.k * 4 > arch.output_rf_bytes:
        return False
    pos = {dim: i for i, dim in enumerate(tm.order)}
    # Partially reduced 32-bit outputs never leave the register file, so a
    # reduction loop outside the pixel loop forces a single reduction tile.
    if pos["c"] < pos["pix"] and s.c < c_total:
        return False
    # A layer whose post-ops need whole channel vectors can still run
    # non-pixelwise: the post-processing is then deferred to a separate
    # vector pass over the raw 32-bit output.
    if tm.pixelwise:
        if pos["pix"] != 0:
            return False
        if _out_ch(spec) > arch.writeback_entries:
            return False
        # The write-back buffer holds one pixel's vector at a time, so a
        # run drains only once its channel loops finish completely: every
        # output element of the run occupies a register-file entry from
        # its first partial sum until the drain.
        if s.pix * k_total * 4 > arch.output_rf_bytes:
            return False
    return True


def pixelwise_order(spec: LayerSpec, arch: ArchConfig,
                    sm: Optional[SpatialMapping] = None) -> TemporalMapping:
    """The ordering that fuses layernorm/softmax into the write-back.

    Pixels advance along the X-major scan; for each pixel every output
    channel is produced before the scan moves on, so the channel vector
    accumulates in the line buffer and its statistics come for free.
    Raises ValueError when the vector cannot fit that buffer.
    """

    k_total = _out_ch(spec)
    if k_total > arch.writeback_entries:
        raise ValueError(
            f"{spec.name}: channel vector of {k_total} exceeds the "
            f"{arch.writeback_entries}-entry write-back buffer")
    sm = sm or select_dataflow(spec)
    tm = canonical_mapping(spec, arch, sm, force_pixelwise=True)
    return tm


def canonical_mapping(spec: LayerSpec, arch: ArchConfig, sm: SpatialMapping,
                      force_pixelwise: Optional[bool] = None) -> TemporalMapping:
    """Deterministic good mapping used by the network-level flows.

    Layers whose post-processing needs whole channel vectors get the
    pixelwise ordering; the rest minimize staging traffic (weight refetch
    per pixel tile versus input refetch per output-channel group) over the
    candidate tile sizes.
    """

    pixelwise = needs_full_vector(spec) if force_pixelwise is None else force_pixelwise
    d = spec.dims
    k_total, c_total = _out_ch(spec), d.c
    wregs = arch.weight_reg_bytes_total
    orf_entries = arch.output_rf_entries
    in_bytes = spec.in_bytes()
    w_bytes = spec.weight_bytes()

    if spec.kind == KIND_ADD:
        pix = _best_pix(spec, arch, c_total, cap_entries=None)
        tm = TemporalMapping(("pix", "k", "c"), TileScheme(pix, c_total, c_total),
                             pixelwise)
        assert _legal(spec, arch, tm)
        return tm

    if spec.kind == KIND_DWCONV:
        taps = d.fx * d.fy
        c_cap = min(c_total, wregs // taps, arch.input_mem_bytes // taps)
        # Waves scale with the number of 16-lane channel groups the tiling
        # produces, and row-propagate runs amortize their fx-1 fill over
        # the run length.  Pick the tile pair that fragments least, then
        # the longest run.
        choice = None
        for c_t in _tile_candidates(c_total):
            if c_t > max(c_cap, 1):
                continue
            park = c_total if pixelwise else max(c_t, 1)
            pix = _best_pix(spec, arch, c_t,
                            cap_entries=orf_entries // park)
            slices = [c_t] * (c_total // c_t)
            if c_total % c_t:
                slices.append(c_total % c_t)
            frag = sum(-(-cs // 16) for cs in slices)
            key = (frag, -pix, -c_t)
            if choice is None or key < choice[0]:
                choice = (key, pix, c_t)
        _, pix, c_t = choice
        order = ("pix", "k", "c") if pixelwise else ("k", "pix", "c")
        tm = TemporalMapping(order, TileScheme(pix, c_t, c_t), pixelwise)
        assert _legal(spec, arch, tm)
        return tm

    taps = d.fx * d.fy if spec.kind == KIND_CONV else 1
    best = None
    for k_t in _tile_candidates(k_total):
        c_cap = min(wregs // (k_t * taps), arch.input_mem_bytes // taps)
        if c_cap < 1:
            continue
        c_t = max(v for v in _tile_candidates(c_total) if v <= max(c_cap, 1))
        park = k_total if pixelwise else k_t
        pix = _best_pix(spec, arch, c_t, cap_entries=orf_entries // park)
        if pix < 1:
            continue
        tm = TemporalMapping(("pix", "k", "c") if pixelwise else ("k", "pix", "c"),
                             TileScheme(pix, k_t, c_t), pixelwise)
        if not _legal(spec, arch, tm):
            continue
        k_groups = -(-k_total // k_t)
        pix_tiles = -(-_pixels(spec) // pix)
        if pixelwise:
            # Channel loops cycle inside each pixel run: the input stays
            # staged across the K groups when the whole reduction fits,
            # and weights re-stage per run whenever either channel loop
            # tiles.
            whole_c = _input_window_bytes(spec, pix, c_total) \
                <= arch.input_mem_bytes
            input_fill = in_bytes * (1 if whole_c else k_groups)
            refetch = c_t < c_total or k_groups > 1
            weight_fill = w_bytes * (pix_tiles if refetch else 1)
        else:
            # Input is re-staged once per output-channel group; weight
            # tiles re-stage per pixel tile unless a reduction row fits.
            input_fill = in_bytes * k_groups
            weight_fill = w_bytes * (pix_tiles if c_t < c_total else 1)
        cost = input_fill + weight_fill
        key = (cost, -k_t)
        if best is None or key < best[0]:
            best = (key, tm)
    if best is None:
        raise ValueError(f"{spec.name}: no legal mapping fits the local memories")
    return best[1]


def streaming_consumer_mapping(spec: LayerSpec, arch: ArchConfig,
                               sm: SpatialMapping) -> Optional[TemporalMapping]:
    """Mapping that reads the layer input exactly once, for consumers fed
    tile by tile from a producer: full reduction resident, output-channel
    groups cycled inside each pixel tile (weights re-staged instead of
    input).  None when the reduction does not fit the weight registers."""

    d = spec.dims
    taps = d.fx * d.fy if spec.kind == KIND_CONV else 1
    c_t = d.c
    wregs = arch.weight_reg_bytes_total
    if c_t * taps > wregs or c_t * taps > arch.input_mem_bytes:
        return None
    k_cap = wregs // (c_t * taps)
    k_total = _out_ch(spec)
    k_t = max(v for v in _tile_candidates(k_total) if v <= k_cap)
    # Vector post-ops must ride the pixelwise write-back here: there is no
    # raw intermediate left in memory for a deferred pass to re-read.
    pixelwise = needs_full_vector(spec)
    park = k_total if pixelwise else k_t
    pix = _best_pix(spec, arch, c_t,
                    cap_entries=arch.output_rf_entries // park)
    tm = TemporalMapping(("pix", "k", "c"), TileScheme(pix, k_t, c_t),
                         pixelwise=pixelwise)
    return tm if _legal(spec, arch, tm) else None


def _best_pix(spec: LayerSpec, arch: ArchConfig, c_tile: int,
              cap_entries: Optional[int]) -> int:
    best = 1
    for pix in _pix_candidates(spec, cap=cap_entries):
        if _input_window_bytes(spec, pix, c_tile) <= arch.input_mem_bytes:
            best = max(best, pix)
    return best


def enumerate_temporal_mappings(spec: LayerSpec, arch: ArchConfig,
                                sm: Optional[SpatialMapping] = None,
                                limit: int = 512) -> Iterator[TemporalMapping]:
    """Yield legal temporal mappings, deterministically ordered.

    Tile sizes are powers of two or exact divisors of their loop extent;
    loop orders run over the three tile loops.  Enumeration stops after
    ``limit`` mappings.
    """

    sm = sm or select_dataflow(spec)
    d = spec.dims
    k_total, c_total = _out_ch(spec), d.c
    count = 0
    k_opts = _tile_candidates(k_total) if spec.kind != KIND_DWCONV else None
    for order in itertools.permutations(("pix", "k", "c")):
        for pix in _pix_candidates(spec):
            for c_t in _tile_candidates(c_total):
                ks = [c_t] if spec.kind == KIND_DWCONV else k_opts
                for k_t in ks:
                    scheme = TileScheme(pix, k_t, c_t)
                    # Pixelwise write-back is an extra scheduling choice
                    # available when the pixel loop is outermost and the
                    # channel vector fits the write-back line buffer.
                    opts = ((False, True)
                            if order[0] == "pix"
                            and k_total <= arch.writeback_entries
                            else (False,))
                    for pixelwise in opts:
                        tm = TemporalMapping(order, scheme, pixelwise)
                        if not _legal(spec, arch, tm):
                            continue
                        yield tm
                        count += 1
                        if count >= limit:
                            return
