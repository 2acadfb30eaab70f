"""Program generation checked from three sides.

1. Instruction-shape oracles: a hand-sized layer lowers to an exact,
   manually derived instruction list.
2. Bit-exactness: run the lowered program on the machine and compare
   every output byte against the scalar reference operators, across
   operator kinds, dataflows, write-back chains and tiling variants.
3. Cost agreement: the byte counters of a run must equal the analytical
   cost row the program was lowered from, level by level; cycle counts
   must match exactly for the single-layer cases and stay within the
   model tolerance for interleaved pairs.

Expected values in the shape oracle are worked out by hand from the
mapping rules (16x16 channels over a 4x4 tile stage one window, one
weight block, one compute, one store).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vitaccel.arch import (LEVEL_DRAM, LEVEL_INPUT_MEM, LEVEL_OUTPUT_RF,
                           LEVEL_SRAM, LEVEL_WEIGHT_REGS, default_arch)
from vitaccel.cost_model import evaluate_layer, vector_pass_cost
from vitaccel.golden import QTensor, ref_layer
from vitaccel.isa import (LVL_DRAM, LVL_IMEM, LVL_SRAM, LVL_WREG, Compute,
                          Halt, Load, PostCfg, PostPass, Store, Sync)
from vitaccel.lower import (ActView, OutView, PlacementError, WeightsView,
                            lower_layer, lower_streamed_pair, staging_needs)
from vitaccel.machine import Machine
from vitaccel.mapping import (SpatialMapping, TemporalMapping, TileScheme,
                              canonical_mapping, enumerate_temporal_mappings,
                              select_dataflow, streaming_consumer_mapping)
from vitaccel.workload import (KIND_ADD, KIND_CONV, KIND_DWCONV, KIND_GEMM,
                               KIND_PW, LayerDims, LayerSpec, POST_ACT,
                               POST_LAYERNORM, POST_REQUANT, POST_SOFTMAX,
                               PostOp)

ARCH = default_arch()
DRAM_BYTES = 1 << 22

# fixed address map for single-layer runs; regions are far apart so a
# stray write lands in zeroed space and shows up as a mismatch
W0 = 0
G0 = 1 << 16
B0 = G0 + (1 << 14)
IN0 = 1 << 17
IN1 = IN0 + (1 << 16)
OUT0 = 1 << 20
RAW0 = 1 << 21

S_IN0 = 0
S_IN1 = 1 << 15
S_OUT = 1 << 16
S_WSTAGE = 3 << 16
S_ISTAGE = S_WSTAGE + (1 << 15)
S_RAW = 5 << 16


CHAINS = {
    "none": [],
    "rq": [PostOp(POST_REQUANT, (19, 12))],
    "act_rq": [PostOp(POST_ACT, ("relu",)), PostOp(POST_REQUANT, (23, 13))],
    "ln_rq": [PostOp(POST_LAYERNORM, (3 << 13, 14)),
              PostOp(POST_REQUANT, (1 << 14, 14))],
    "sm": [PostOp(POST_SOFTMAX, (21474836, 31, 127, 16))],
}


def mk_spec(kind, chain="none", **dims):
    inputs = ["a", "b"] if kind == KIND_ADD else ["a"]
    win = "w" if kind == KIND_GEMM else None
    return LayerSpec("t", kind, LayerDims(**dims), inputs, weight_input=win,
                     post_ops=list(CHAINS[chain]))


def golden_operands(spec, seed):
    """Reference-layout inputs and weights for a spec."""
    rng = np.random.default_rng(seed)
    d = spec.dims
    if spec.kind == KIND_GEMM:
        xs = [rng.integers(-128, 128, size=(d.b, d.ox, d.c), dtype=np.int8)]
        w = rng.integers(-128, 128, size=(d.b, d.k, d.c), dtype=np.int8)
    elif spec.kind == KIND_ADD:
        shape = (d.b, d.c, d.ox, d.oy)
        xs = [rng.integers(-128, 128, size=shape, dtype=np.int8)
              for _ in range(2)]
        w = None
    else:
        ix, iy = spec.in_spatial()
        xs = [rng.integers(-128, 128, size=(d.b, d.c, ix, iy),
                           dtype=np.int8)]
        if spec.kind == KIND_DWCONV:
            w = rng.integers(-128, 128, size=(d.c, d.fx, d.fy),
                             dtype=np.int8)
        elif spec.kind == KIND_PW:
            w = rng.integers(-128, 128, size=(d.k, d.c), dtype=np.int8)
        else:
            w = rng.integers(-128, 128, size=(d.k, d.c, d.fx, d.fy),
                             dtype=np.int8)
    gamma = beta = None
    if spec.has_post(POST_LAYERNORM):
        n = spec.out_channels
        gamma = rng.integers(-20000, 20000, size=n, dtype=np.int64)
        beta = rng.integers(-70000, 70000, size=n, dtype=np.int64)
    return xs, w, gamma, beta


def act_image(spec, x):
    """Padded (b, X, Y, c) memory bytes plus the matching dense view
    extents for one activation operand."""
    if spec.kind == KIND_GEMM:
        return np.ascontiguousarray(x), (x.shape[0], x.shape[1], 1,
                                         x.shape[2])
    px, py = spec.pad if spec.kind != KIND_ADD else (0, 0)
    xp = np.pad(x, ((0, 0), (0, 0), (px, px), (py, py)))
    mem = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    return mem, mem.shape


def put(m, level, addr, arr):
    flat = np.ascontiguousarray(arr, dtype=np.int8).ravel()
    mem = m.dram if level == LVL_DRAM else m.sram
    mem[addr:addr + flat.size] = flat


def put_i32(m, addr, arr):
    raw = np.asarray(arr).astype("<i4").view(np.int8)
    m.dram[addr:addr + raw.size] = raw


def weight_view(spec, level, addr):
    d = spec.dims
    if spec.kind == KIND_DWCONV:
        return WeightsView(level, addr, 0, 0, d.fx * d.fy)
    if spec.kind == KIND_PW:
        return WeightsView(level, addr, 0, d.c, 1)
    if spec.kind == KIND_GEMM:
        return WeightsView(level, addr, d.k * d.c, d.c, 1)
    return WeightsView(level, addr, 0, d.c * d.fx * d.fy, d.fx * d.fy)


def ref_to_mem(spec, ref):
    """Reference output -> the dense (b, x, y, k) byte image the lowered
    store scatter should have produced."""
    b, X, Y, C = spec.out_shape()
    if spec.kind == KIND_GEMM:
        mem = np.ascontiguousarray(ref.data)   # (b, rows, k), channel last
    else:
        mem = np.ascontiguousarray(ref.data.transpose(0, 2, 3, 1))
    return mem.reshape(b, X, Y, C)


def read_out(m, spec, level, addr, elem_bytes):
    total = spec.out_elements()
    mem = m.dram if level == LVL_DRAM else m.sram
    raw = mem[addr:addr + total * elem_bytes]
    vals = raw.view("<i4") if elem_bytes == 4 else raw
    b, X, Y, C = spec.out_shape()
    return vals.reshape(b, X, Y, C).astype(np.int64)


def run_layer(spec, seed, *, policy="reconfigurable", sm=None, tm=None,
              pixelwise=None, in_level=LVL_DRAM, w_level=LVL_DRAM,
              out_level=LVL_DRAM, deferred=False, raw_capacity=None,
              arch=ARCH):
    """Lower one layer, execute it, and gather everything a test needs."""
    sm = sm or select_dataflow(spec, policy)
    if tm is None:
        tm = canonical_mapping(spec, arch, sm, force_pixelwise=pixelwise)
    xs, w, gamma, beta = golden_operands(spec, seed)
    ref = ref_layer(spec, [QTensor(x) for x in xs],
                    QTensor(w) if w is not None else None,
                    gamma=gamma, beta=beta)

    m = Machine(arch, np.zeros(DRAM_BYTES, dtype=np.int8))
    in_views = []
    for i, x in enumerate(xs):
        mem, (b, X, Y, C) = act_image(spec, x)
        addr = (IN0, IN1)[i] if in_level == LVL_DRAM else (S_IN0, S_IN1)[i]
        put(m, in_level, addr, mem)
        in_views.append(ActView(in_level, addr, b, X, Y, C,
                                X * Y * C, Y * C, C, 1))
    wv = None
    if w is not None:
        put(m, w_level, W0 if w_level == LVL_DRAM else S_WSTAGE - (1 << 15),
            w)
        w_addr = W0 if w_level == LVL_DRAM else S_WSTAGE - (1 << 15)
        wv = weight_view(spec, w_level, w_addr)
    if gamma is not None:
        put_i32(m, G0, gamma)
        put_i32(m, B0, beta)

    eb = 4 if deferred or spec.out_bits() == 32 else 1
    final_eb = spec.out_bits() // 8
    b, X, Y, C = spec.out_shape()
    out_addr = OUT0 if out_level == LVL_DRAM else S_OUT
    out = OutView(out_level, out_addr, final_eb,
                  X * Y * C * final_eb, Y * C * final_eb, C * final_eb,
                  final_eb)

    need = staging_needs(spec, arch, sm, tm,
                         input_in_dram=(in_level == LVL_DRAM),
                         weights_in_dram=(w_level == LVL_DRAM),
                         deferred=deferred)
    kw = {}
    if need["weight_stage"]:
        kw["weight_stage"] = S_WSTAGE
    if need["input_stage"]:
        kw["input_stage"] = S_ISTAGE
    if deferred:
        kw["raw_addr"] = RAW0 if out_level == LVL_DRAM else S_RAW
        kw["raw_capacity"] = raw_capacity
    if gamma is not None:
        kw["gamma_addr"], kw["beta_addr"] = G0, B0

    prog = lower_layer(spec, arch, sm, tm, inputs=in_views, weights=wv,
                       out=out, deferred=deferred, **kw)
    res = m.run(list(prog) + [Halt()])
    got = read_out(m, spec, out_level, out_addr, final_eb)
    want = ref_to_mem(spec, ref).astype(np.int64)
    return {
        "m": m, "res": res, "prog": prog, "got": got, "want": want,
        "sm": sm, "tm": tm, "ref": ref, "need": need,
        "in_bytes": sum(x.size for x in xs),
        "w_bytes": 0 if w is None else w.size,
        "out_addr": out_addr, "final_eb": final_eb, "eb": eb,
    }


def model_row(spec, r, *, in_level, w_level, out_level, deferred=False,
              arch=ARCH):
    cost = evaluate_layer(
        spec, arch, r["sm"], r["tm"],
        input_dram_bytes=r["in_bytes"] if in_level == LVL_DRAM else 0,
        weight_dram_bytes=r["w_bytes"] if w_level == LVL_DRAM else 0,
        output_to_dram=(out_level == LVL_DRAM),
        out_elem_bytes=4 if deferred else None)
    if deferred:
        cost = cost.merged_with(
            vector_pass_cost("post", spec.out_elements(), arch,
                             io_in_dram=(out_level == LVL_DRAM),
                             out_elem_bytes=spec.out_bits() // 8),
            spec.name)
    return cost


def table_fetch_bytes(spec, prog):
    """DRAM bytes the machine spends on normalization tables, one fetch
    per configured slot carrying the table stage."""
    extra = 0
    for ins in prog:
        if isinstance(ins, PostCfg):
            extra += sum(8 * ins.vec_len for kind, _ in ins.ops
                         if kind == "ln")
    return extra


# --------------------------------------------------------------------------
# Instruction-shape oracle.
# --------------------------------------------------------------------------

def test_minimal_pw_shape():
    spec = mk_spec(KIND_PW, b=1, k=16, c=16, ox=4, oy=4)
    r = run_layer(spec, seed=1)
    prog = r["prog"]
    assert [type(i) for i in prog] == [Load, Load, Compute, Store]

    wload, iload, comp, store = prog
    assert wload.dst_level == LVL_WREG and wload.src_level == LVL_DRAM
    assert wload.src_addr == W0 and wload.nbytes == 256
    assert iload.dst_level == LVL_IMEM and iload.src_level == LVL_DRAM
    assert iload.src_addr == IN0 and iload.nbytes == 256
    assert comp.kind == "pwconv" and comp.dataflow == "C|K"
    assert (comp.b, comp.k, comp.c, comp.ox, comp.oy) == (1, 16, 16, 4, 4)
    assert comp.init and comp.orf_base == 0
    assert store.dst_level == LVL_DRAM and store.dst_addr == OUT0
    assert store.vec_len == 16 and store.n_pix == 16 and store.slot == 0
    assert {i.tile for i in prog} == {0}

    # hand-checked totals (preload 16, transfer 80, 16 waves, drain 64)
    assert r["res"].cycles == 176
    assert (r["got"] == r["want"]).all()


def test_minimal_pw_matches_model_row():
    spec = mk_spec(KIND_PW, b=1, k=16, c=16, ox=4, oy=4)
    r = run_layer(spec, seed=2)
    cost = model_row(spec, r, in_level=LVL_DRAM, w_level=LVL_DRAM,
                     out_level=LVL_DRAM)
    assert r["res"].access_bytes == cost.access_bytes
    assert r["res"].cycles == cost.total_cycles
    assert r["res"].macs == cost.macs


# --------------------------------------------------------------------------
# Bit-exactness across kinds, chains and dataflows.
# --------------------------------------------------------------------------

@pytest.mark.parametrize("chain", ["none", "rq", "act_rq"])
@pytest.mark.parametrize("kind,dims", [
    (KIND_PW, dict(b=1, k=24, c=20, ox=6, oy=5)),
    (KIND_CONV, dict(b=1, k=9, c=7, ox=5, oy=4, fx=3, fy=3)),
    (KIND_DWCONV, dict(b=1, k=1, c=18, ox=5, oy=6, fx=3, fy=3)),
    (KIND_GEMM, dict(b=3, k=10, c=22, ox=7, oy=1)),
    (KIND_ADD, dict(b=1, k=13, c=13, ox=4, oy=5)),
])
def test_bits_match_reference(kind, dims, chain):
    spec = mk_spec(kind, chain, **dims)
    for seed in (11, 12):
        r = run_layer(spec, seed)
        assert (r["got"] == r["want"]).all(), f"{kind}/{chain}"


@pytest.mark.parametrize("kind,dims", [
    (KIND_PW, dict(b=1, k=12, c=10, ox=4, oy=4)),
    (KIND_DWCONV, dict(b=1, k=1, c=12, ox=4, oy=4, fx=3, fy=3)),
    (KIND_CONV, dict(b=1, k=6, c=5, ox=4, oy=4, fx=2, fy=2)),
])
def test_bits_match_under_fixed_dataflow(kind, dims):
    spec = mk_spec(kind, "rq", **dims)
    r = run_layer(spec, seed=21, policy="fixed")
    assert r["sm"].dataflow == "OX|C"
    assert (r["got"] == r["want"]).all()


def test_bits_with_stride_and_pad():
    spec = LayerSpec("t", KIND_CONV,
                     LayerDims(b=1, k=8, c=6, ox=5, oy=4, fx=3, fy=3),
                     ["a"], stride=(2, 2), pad=(1, 1),
                     post_ops=[PostOp(POST_REQUANT, (19, 12))])
    r = run_layer(spec, seed=31)
    assert (r["got"] == r["want"]).all()

    dw = LayerSpec("t", KIND_DWCONV,
                   LayerDims(b=1, k=1, c=20, ox=6, oy=6, fx=5, fy=5),
                   ["a"], pad=(2, 2))
    r = run_layer(dw, seed=32)
    assert (r["got"] == r["want"]).all()


def test_fused_layernorm_pixelwise():
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=24, c=16, ox=4, oy=6)
    r = run_layer(spec, seed=41, pixelwise=True, out_level=LVL_SRAM)
    assert r["tm"].pixelwise
    assert (r["got"] == r["want"]).all()
    # fused write-back: the produced tensor is never read back on chip
    out_lo, out_hi = S_OUT, S_OUT + spec.out_elements()
    assert all(a + n <= out_lo or a >= out_hi
               for a, n in r["res"].sram_reads)
    # normalization tables travel once over the bus
    assert (G0, 4 * 24) in r["res"].dram_reads
    assert (B0, 4 * 24) in r["res"].dram_reads


def test_fused_softmax_pixelwise():
    spec = mk_spec(KIND_GEMM, "sm", b=2, k=9, c=15, ox=6, oy=1)
    r = run_layer(spec, seed=42, pixelwise=True)
    assert (r["got"] == r["want"]).all()


def test_fused_add_layernorm_pixelwise():
    spec = mk_spec(KIND_ADD, "ln_rq", b=1, k=20, c=20, ox=3, oy=4)
    r = run_layer(spec, seed=43, pixelwise=True)
    assert (r["got"] == r["want"]).all()


def test_fused_dw_layernorm_pixelwise():
    spec = LayerSpec("t", KIND_DWCONV,
                     LayerDims(b=1, k=1, c=24, ox=4, oy=4, fx=3, fy=3),
                     ["a"], pad=(1, 1), post_ops=list(CHAINS["ln_rq"]))
    r = run_layer(spec, seed=44, pixelwise=True)
    assert (r["got"] == r["want"]).all()


# --------------------------------------------------------------------------
# Tiling variants: forced mappings that exercise every walk branch.
# --------------------------------------------------------------------------

def _tm(order, pix, k, c, pixelwise=False):
    return TemporalMapping(tuple(order), TileScheme(pix, k, c), pixelwise)


# (name, dims, mapping): output-channel passes outside the pixel loop,
# per-tile weight refetch, reduction blocks that exceed the input memory,
# and the combination of channel passes with a streamed reduction
VARIANTS = [
    ("k_outside", dict(b=1, k=40, c=48, ox=8, oy=8),
     _tm(("k", "pix", "c"), 16, 8, 48)),
    ("refetch", dict(b=1, k=16, c=80, ox=8, oy=8),
     _tm(("k", "pix", "c"), 16, 16, 16)),
    ("no_c_fit", dict(b=1, k=16, c=1024, ox=4, oy=4),
     _tm(("k", "pix", "c"), 16, 16, 512)),
    ("kout_no_c_fit", dict(b=1, k=32, c=1024, ox=4, oy=4),
     _tm(("k", "pix", "c"), 16, 16, 512)),
    ("pixelwise_multik", dict(b=1, k=48, c=32, ox=4, oy=4),
     _tm(("pix", "k", "c"), 8, 16, 32, pixelwise=True)),
]


@pytest.mark.parametrize("name,dims,tm", VARIANTS, ids=[v[0] for v in VARIANTS])
def test_variant_bits(name, dims, tm):
    spec = mk_spec(KIND_PW, "rq", **dims)
    r = run_layer(spec, seed=51, tm=tm)
    assert (r["got"] == r["want"]).all(), name


@pytest.mark.parametrize("name,dims,tm", VARIANTS, ids=[v[0] for v in VARIANTS])
def test_variant_byte_and_cycle_parity(name, dims, tm):
    spec = mk_spec(KIND_PW, "rq", **dims)
    r = run_layer(spec, seed=52, tm=tm)
    cost = model_row(spec, r, in_level=LVL_DRAM, w_level=LVL_DRAM,
                     out_level=LVL_DRAM)
    assert r["res"].access_bytes == cost.access_bytes, name
    assert r["res"].cycles == cost.total_cycles, name


def test_uneven_k_slices_use_two_slots():
    # 40 output channels in tiles of 16 -> stripes of 16, 16 and 8
    spec = mk_spec(KIND_PW, "rq", b=1, k=40, c=48, ox=8, oy=8)
    r = run_layer(spec, seed=53, tm=_tm(("k", "pix", "c"), 16, 16, 48))
    cfgs = [i for i in r["prog"] if isinstance(i, PostCfg)]
    assert sorted({c.vec_len for c in cfgs}) == [8, 16]
    assert (r["got"] == r["want"]).all()


def test_dw_channel_blocks():
    # depthwise with a channel tile below the layer width: weights are
    # re-fetched per tile and each block writes its own channel range
    spec = LayerSpec("t", KIND_DWCONV,
                     LayerDims(b=1, k=1, c=48, ox=6, oy=6, fx=3, fy=3),
                     ["a"], pad=(1, 1), post_ops=list(CHAINS["rq"]))
    tm = _tm(("k", "pix", "c"), 6, 16, 16)
    r = run_layer(spec, seed=54, tm=tm)
    assert (r["got"] == r["want"]).all()
    cost = model_row(spec, r, in_level=LVL_DRAM, w_level=LVL_DRAM,
                     out_level=LVL_DRAM)
    for lvl in (LEVEL_WEIGHT_REGS, LEVEL_OUTPUT_RF):
        assert r["res"].access_bytes[lvl] == cost.access_bytes[lvl]


# --------------------------------------------------------------------------
# Byte and cycle parity over operand residency.
# --------------------------------------------------------------------------

LVLS = {"dram": LVL_DRAM, "sram": LVL_SRAM}


@pytest.mark.parametrize("w_res", ["dram", "sram"])
@pytest.mark.parametrize("in_res", ["dram", "sram"])
@pytest.mark.parametrize("out_res", ["dram", "sram"])
def test_residency_parity_pw(in_res, w_res, out_res):
    spec = mk_spec(KIND_PW, "rq", b=1, k=24, c=32, ox=8, oy=8)
    r = run_layer(spec, seed=61, in_level=LVLS[in_res],
                  w_level=LVLS[w_res], out_level=LVLS[out_res])
    cost = model_row(spec, r, in_level=LVLS[in_res], w_level=LVLS[w_res],
                     out_level=LVLS[out_res])
    assert (r["got"] == r["want"]).all()
    assert r["res"].access_bytes == cost.access_bytes
    assert r["res"].cycles == cost.total_cycles


@pytest.mark.parametrize("kind,dims", [
    (KIND_GEMM, dict(b=2, k=16, c=24, ox=6, oy=1)),
    (KIND_ADD, dict(b=1, k=24, c=24, ox=6, oy=4)),
])
def test_residency_parity_other_kinds(kind, dims):
    spec = mk_spec(kind, "rq", **dims)
    for in_res, out_res in (("dram", "dram"), ("sram", "sram"),
                            ("dram", "sram")):
        r = run_layer(spec, seed=62, in_level=LVLS[in_res],
                      out_level=LVLS[out_res])
        cost = model_row(spec, r, in_level=LVLS[in_res], w_level=LVL_DRAM,
                         out_level=LVLS[out_res])
        assert (r["got"] == r["want"]).all()
        assert r["res"].access_bytes == cost.access_bytes
        assert r["res"].cycles == cost.total_cycles


def test_mixed_residency_add():
    # one operand streams from DRAM, the other is scratchpad resident
    spec = mk_spec(KIND_ADD, "rq", b=1, k=16, c=16, ox=4, oy=4)
    sm = select_dataflow(spec)
    tm = canonical_mapping(spec, ARCH, sm)
    xs, _, _, _ = golden_operands(spec, 63)
    ref = ref_layer(spec, [QTensor(x) for x in xs])
    m = Machine(ARCH, np.zeros(DRAM_BYTES, dtype=np.int8))
    mem0, shape0 = act_image(spec, xs[0])
    mem1, shape1 = act_image(spec, xs[1])
    put(m, LVL_DRAM, IN0, mem0)
    put(m, LVL_SRAM, S_IN1, mem1)
    b, X, Y, C = shape0
    views = [ActView(LVL_DRAM, IN0, b, X, Y, C, X * Y * C, Y * C, C, 1),
             ActView(LVL_SRAM, S_IN1, b, X, Y, C, X * Y * C, Y * C, C, 1)]
    out = OutView(LVL_DRAM, OUT0, 1, X * Y * C, Y * C, C, 1)
    prog = lower_layer(spec, ARCH, sm, tm, inputs=views, out=out)
    res = m.run(list(prog) + [Halt()])
    got = read_out(m, spec, LVL_DRAM, OUT0, 1)
    assert (got == ref_to_mem(spec, ref)).all()
    cost = evaluate_layer(spec, ARCH, sm, tm,
                          input_dram_bytes=mem0.size,
                          weight_dram_bytes=0, output_to_dram=True)
    assert res.access_bytes == cost.access_bytes
    assert res.cycles == cost.total_cycles


def test_conv_resident_parity_exact():
    # halo overlap between window loads is scratchpad traffic the model
    # also charges, so a resident conv agrees byte for byte
    spec = mk_spec(KIND_CONV, "rq", b=1, k=8, c=12, ox=8, oy=8, fx=3, fy=3)
    r = run_layer(spec, seed=64, in_level=LVL_SRAM)
    cost = model_row(spec, r, in_level=LVL_SRAM, w_level=LVL_DRAM,
                     out_level=LVL_DRAM)
    assert (r["got"] == r["want"]).all()
    assert r["res"].access_bytes == cost.access_bytes
    assert r["res"].cycles == cost.total_cycles


def test_conv_dram_window_restream():
    # windows re-stream their halo from DRAM: the simulator moves the
    # per-tile window bytes while the model books a proportional share
    spec = mk_spec(KIND_CONV, "rq", b=1, k=8, c=12, ox=8, oy=8, fx=3, fy=3)
    r = run_layer(spec, seed=65, in_level=LVL_DRAM)
    cost = model_row(spec, r, in_level=LVL_DRAM, w_level=LVL_DRAM,
                     out_level=LVL_DRAM)
    got, want = r["res"].access_bytes, cost.access_bytes
    for lvl in (LEVEL_INPUT_MEM, LEVEL_WEIGHT_REGS, LEVEL_OUTPUT_RF,
                LEVEL_SRAM):
        assert got[lvl] == want[lvl]
    assert got[LEVEL_DRAM] >= want[LEVEL_DRAM]
    assert r["res"].cycles <= cost.total_cycles * 1.10
    assert (r["got"] == r["want"]).all()


def test_fused_layernorm_parity_with_table_delta():
    # model rows know nothing about the gamma/beta fetch; the machine
    # charges it to DRAM and to the up-front transfer, nothing else
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=32, c=16, ox=4, oy=4)
    r = run_layer(spec, seed=66, pixelwise=True)
    cost = model_row(spec, r, in_level=LVL_DRAM, w_level=LVL_DRAM,
                     out_level=LVL_DRAM)
    extra = table_fetch_bytes(spec, r["prog"])
    assert extra == 8 * 32
    got = dict(r["res"].access_bytes)
    assert got[LEVEL_DRAM] == cost.access_bytes[LEVEL_DRAM] + extra
    for lvl in (LEVEL_SRAM, LEVEL_INPUT_MEM, LEVEL_WEIGHT_REGS,
                LEVEL_OUTPUT_RF):
        assert got[lvl] == cost.access_bytes[lvl]
    w = r["w_bytes"]
    delta = math.ceil((w + extra) / 16) - math.ceil(w / 16)
    assert r["res"].cycles == cost.total_cycles + delta


# --------------------------------------------------------------------------
# Deferred post-processing.
# --------------------------------------------------------------------------

def test_deferred_matches_fused_bits():
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=24, c=16, ox=4, oy=6)
    fused = run_layer(spec, seed=71, pixelwise=True)
    deferred = run_layer(spec, seed=71, pixelwise=False, deferred=True)
    assert (fused["got"] == fused["want"]).all()
    assert (deferred["got"] == fused["got"]).all()


def test_deferred_parity_and_reread():
    # one pixel tile keeps the drain chain on the model's closed form
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=24, c=16, ox=4, oy=6)
    r = run_layer(spec, seed=72, tm=_tm(("k", "pix", "c"), 24, 24, 16),
                  deferred=True, out_level=LVL_SRAM)
    cost = model_row(spec, r, in_level=LVL_DRAM, w_level=LVL_DRAM,
                     out_level=LVL_SRAM, deferred=True)
    extra = table_fetch_bytes(spec, r["prog"])
    got = dict(r["res"].access_bytes)
    assert got[LEVEL_DRAM] == cost.access_bytes[LEVEL_DRAM] + extra
    assert got[LEVEL_SRAM] == cost.access_bytes[LEVEL_SRAM]
    w = r["w_bytes"]
    delta = math.ceil((w + extra) / 16) - math.ceil(w / 16)
    assert r["res"].cycles == cost.total_cycles + delta
    # unfusing round-trips the 32-bit tensor through the scratchpad
    raw_bytes = 4 * spec.out_elements()
    raw_reads = sum(n for a, n in r["res"].sram_reads
                    if S_RAW <= a < S_RAW + raw_bytes)
    assert raw_reads == raw_bytes
    assert got[LEVEL_SRAM] >= 2 * raw_bytes


def test_deferred_in_dram_parity():
    spec = mk_spec(KIND_GEMM, "sm", b=2, k=12, c=20, ox=8, oy=1)
    r = run_layer(spec, seed=73, tm=_tm(("k", "pix", "c"), 8, 12, 20),
                  deferred=True, out_level=LVL_DRAM)
    cost = model_row(spec, r, in_level=LVL_DRAM, w_level=LVL_DRAM,
                     out_level=LVL_DRAM, deferred=True)
    assert (r["got"] == r["want"]).all()
    assert r["res"].access_bytes == cost.access_bytes
    assert r["res"].cycles == cost.total_cycles


def test_deferred_chunked_regions():
    # a raw buffer smaller than the tensor splits the layer into
    # serialized chunks; bytes are unchanged and bits stay exact
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=16, c=16, ox=8, oy=8)
    tm = _tm(("k", "pix", "c"), 16, 16, 16)
    full = run_layer(spec, seed=74, tm=tm, deferred=True,
                     out_level=LVL_SRAM)
    rows_cap = 16 * 16 * 4   # one 16-pixel tile of the 64-pixel tensor
    part = run_layer(spec, seed=74, tm=tm, deferred=True,
                     out_level=LVL_SRAM, raw_capacity=rows_cap)
    assert sum(isinstance(i, Sync) for i in part["prog"]) >= 3
    assert (part["got"] == full["got"]).all()
    for lvl in (LEVEL_SRAM, LEVEL_DRAM, LEVEL_INPUT_MEM,
                LEVEL_WEIGHT_REGS, LEVEL_OUTPUT_RF):
        assert part["res"].access_bytes[lvl] == full["res"].access_bytes[lvl]
    # chunking only serializes; it moves no extra bytes
    assert full["res"].cycles <= part["res"].cycles
    assert part["res"].cycles <= full["res"].cycles * 3


def test_deferred_dw_line_major_layout():
    # depthwise scans along X, so the deferred pass wants the tensor laid
    # out line by line; consumers absorb that through view strides
    spec = LayerSpec("t", KIND_DWCONV,
                     LayerDims(b=1, k=1, c=16, ox=6, oy=5, fx=3, fy=3),
                     ["a"], pad=(1, 1), post_ops=list(CHAINS["ln_rq"]))
    sm = select_dataflow(spec)
    # one tile per scan line, so tiles visit the image line by line
    tm = _tm(("k", "pix", "c"), 6, 16, 16)
    xs, w, gamma, beta = golden_operands(spec, 75)
    ref = ref_layer(spec, [QTensor(xs[0])], QTensor(w), gamma=gamma,
                    beta=beta)
    m = Machine(ARCH, np.zeros(DRAM_BYTES, dtype=np.int8))
    mem, (b, X, Y, C) = act_image(spec, xs[0])
    put(m, LVL_DRAM, IN0, mem)
    put(m, LVL_DRAM, W0, w)
    put_i32(m, G0, gamma)
    put_i32(m, B0, beta)
    views = [ActView(LVL_DRAM, IN0, b, X, Y, C, X * Y * C, Y * C, C, 1)]
    d = spec.dims
    # line-major output: y outermost, then x, channels contiguous
    out = OutView(LVL_SRAM, S_OUT, 1, d.ox * d.oy * 16, 16, d.ox * 16, 1)
    prog = lower_layer(spec, ARCH, sm, tm, inputs=views,
                       weights=weight_view(spec, LVL_DRAM, W0), out=out,
                       deferred=True, raw_addr=S_RAW,
                       gamma_addr=G0, beta_addr=B0)
    m.run(list(prog) + [Halt()])
    raw = m.sram[S_OUT:S_OUT + spec.out_elements()]
    got = raw.reshape(d.oy, d.ox, 16).transpose(1, 0, 2)[None]
    want = ref_to_mem(spec, ref)
    assert (got.astype(np.int64) == want).all()
    # line-major visits are contiguous: one pass per chunk, not per pixel
    assert sum(isinstance(i, PostPass) for i in prog) == 1


def test_deferred_padded_destination_splits_passes():
    # writing straight into a padded tensor forces one pass per scan line
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=16, c=16, ox=4, oy=4)
    sm = select_dataflow(spec)
    tm = _tm(("k", "pix", "c"), 16, 16, 16)
    xs, w, gamma, beta = golden_operands(spec, 76)
    ref = ref_layer(spec, [QTensor(xs[0])], QTensor(w), gamma=gamma,
                    beta=beta)
    m = Machine(ARCH, np.zeros(DRAM_BYTES, dtype=np.int8))
    mem, (b, X, Y, C) = act_image(spec, xs[0])
    put(m, LVL_DRAM, IN0, mem)
    put(m, LVL_DRAM, W0, w)
    put_i32(m, G0, gamma)
    put_i32(m, B0, beta)
    views = [ActView(LVL_DRAM, IN0, b, X, Y, C, X * Y * C, Y * C, C, 1)]
    # destination padded by one pixel ring: (6, 6, 16) with interior base
    py_stride, px_stride = 16, 6 * 16
    base = S_OUT + px_stride + py_stride
    out = OutView(LVL_SRAM, base, 1, 0, px_stride, py_stride, 1)
    prog = lower_layer(spec, ARCH, sm, tm, inputs=views,
                       weights=weight_view(spec, LVL_DRAM, W0), out=out,
                       deferred=True, raw_addr=S_RAW,
                       gamma_addr=G0, beta_addr=B0)
    m.run(list(prog) + [Halt()])
    assert sum(isinstance(i, PostPass) for i in prog) == 4
    img = m.sram[S_OUT:S_OUT + 6 * 6 * 16].reshape(6, 6, 16)
    got = img[1:5, 1:5, :][None]
    assert (got.astype(np.int64) == ref_to_mem(spec, ref)).all()
    # the padding ring was never written
    ring = np.ones((6, 6), dtype=bool)
    ring[1:5, 1:5] = False
    assert (img[ring] == 0).all()


# --------------------------------------------------------------------------
# Attention-shaped operand views.
# --------------------------------------------------------------------------

def test_transposed_input_gemm():
    # scores = q @ k over a channel-major activation: both gemm operands
    # are views into the same (pixel, channel) tensor with k-index strides
    heads, dim, tok = 2, 8, 16
    spec = LayerSpec("t", KIND_GEMM,
                     LayerDims(b=heads, k=dim, c=tok, ox=dim, oy=1),
                     ["q"], weight_input="kk",
                     post_ops=[PostOp(POST_REQUANT, (19, 12))])
    rng = np.random.default_rng(81)
    ch = heads * dim
    qmem = rng.integers(-128, 128, size=(tok, ch), dtype=np.int8)
    kmem = rng.integers(-128, 128, size=(tok, ch), dtype=np.int8)
    # reference operands: x[bi, r, t] = q[t, bi*dim + r]
    x = qmem.reshape(tok, heads, dim).transpose(1, 2, 0)
    w = kmem.reshape(tok, heads, dim).transpose(1, 2, 0)
    ref = ref_layer(spec, [QTensor(np.ascontiguousarray(x))],
                    QTensor(np.ascontiguousarray(w)))
    m = Machine(ARCH, np.zeros(DRAM_BYTES, dtype=np.int8))
    put(m, LVL_DRAM, IN0, qmem)
    put(m, LVL_DRAM, W0, kmem)
    views = [ActView(LVL_DRAM, IN0, heads, dim, 1, tok,
                     sb=dim, sx=1, sy=0, sc=ch)]
    wv = WeightsView(LVL_DRAM, W0, sb=dim, sk=1, sc=ch)
    out = OutView(LVL_DRAM, OUT0, 1, dim * dim, dim, 0, 1)
    sm = select_dataflow(spec)
    tm = canonical_mapping(spec, ARCH, sm)
    prog = lower_layer(spec, ARCH, sm, tm, inputs=views, weights=wv, out=out)
    m.run(list(prog) + [Halt()])
    got = read_out(m, spec, LVL_DRAM, OUT0, 1)
    assert (got == ref_to_mem(spec, ref)).all()


def test_scattered_output_channels():
    # context values written back head-interleaved: channel stride is the
    # full embedding width, so stores scatter element rows
    heads, dim, tok = 2, 6, 12
    ch = heads * dim
    spec = LayerSpec("t", KIND_GEMM,
                     LayerDims(b=heads, k=tok, c=dim, ox=dim, oy=1),
                     ["s"], weight_input="v",
                     post_ops=[PostOp(POST_REQUANT, (19, 12))])
    rng = np.random.default_rng(82)
    x = rng.integers(-128, 128, size=(heads, dim, dim), dtype=np.int8)
    vmem = rng.integers(-128, 128, size=(tok, ch), dtype=np.int8)
    w = vmem.reshape(tok, heads, dim).transpose(1, 0, 2)
    ref = ref_layer(spec, [QTensor(x)],
                    QTensor(np.ascontiguousarray(w)))
    m = Machine(ARCH, np.zeros(DRAM_BYTES, dtype=np.int8))
    put(m, LVL_DRAM, IN0, x)
    put(m, LVL_DRAM, W0, vmem)
    views = [ActView(LVL_DRAM, IN0, heads, dim, 1, dim,
                     sb=dim * dim, sx=dim, sy=0, sc=1)]
    wv = WeightsView(LVL_DRAM, W0, sb=dim, sk=ch, sc=1)
    # out[bi, r, t] lands at t*ch + bi*dim + r: token-major, head-interleaved
    out = OutView(LVL_DRAM, OUT0, 1, sb=dim, sx=1, sy=0, sc=ch)
    sm = select_dataflow(spec)
    tm = canonical_mapping(spec, ARCH, sm)
    prog = lower_layer(spec, ARCH, sm, tm, inputs=views, weights=wv, out=out)
    res = m.run(list(prog) + [Halt()])
    img = m.dram[OUT0:OUT0 + tok * ch].reshape(tok, ch)
    got = img.reshape(tok, heads, dim).transpose(1, 2, 0).astype(np.int64)
    want = ref_to_mem(spec, ref).reshape(heads, dim, tok)
    assert (got == want).all()
    # element scatter must not inflate the drain byte count
    assert res.access_bytes[LEVEL_OUTPUT_RF] >= 4 * heads * dim * tok


# --------------------------------------------------------------------------
# Fused pair lowering.
# --------------------------------------------------------------------------

def _pair_specs(k_mid=24, ch=8, side=4):
    exp = LayerSpec("e", KIND_PW,
                    LayerDims(b=1, k=k_mid, c=ch, ox=side, oy=side), ["a"],
                    post_ops=[PostOp(POST_ACT, ("relu",)),
                              PostOp(POST_REQUANT, (23, 13))])
    proj = LayerSpec("p", KIND_PW,
                     LayerDims(b=1, k=ch, c=k_mid, ox=side, oy=side), ["e"],
                     post_ops=[PostOp(POST_REQUANT, (19, 12))])
    return exp, proj


def _pair_reference(exp, proj, seed):
    rng = np.random.default_rng(seed)
    d = exp.dims
    ix, iy = exp.in_spatial()
    x = rng.integers(-128, 128, size=(d.b, d.c, ix, iy), dtype=np.int8)
    we = rng.integers(-128, 128, size=(d.k, d.c), dtype=np.int8)
    wp = rng.integers(-128, 128, size=(proj.dims.k, proj.dims.c),
                      dtype=np.int8)
    mid = ref_layer(exp, [QTensor(x)], QTensor(we))
    ref = ref_layer(proj, [mid], QTensor(wp))
    return x, we, wp, ref


def _run_pair(exp, proj, seed, streamed):
    x, we, wp, ref = _pair_reference(exp, proj, seed)
    sm = select_dataflow(exp)
    exp_tm = canonical_mapping(exp, ARCH, sm)
    m = Machine(ARCH, np.zeros(DRAM_BYTES, dtype=np.int8))
    mem, (b, X, Y, C) = act_image(exp, x)
    put(m, LVL_DRAM, IN0, mem)
    put(m, LVL_DRAM, W0, we)
    put(m, LVL_DRAM, W0 + 4096, wp)
    in_view = ActView(LVL_DRAM, IN0, b, X, Y, C, X * Y * C, Y * C, C, 1)
    bo, Xo, Yo, Co = proj.out_shape()
    out = OutView(LVL_DRAM, OUT0, 1, Xo * Yo * Co, Yo * Co, Co, 1)
    we_view = weight_view(exp, LVL_DRAM, W0)
    wp_view = weight_view(proj, LVL_DRAM, W0 + 4096)

    if streamed:
        proj_tm = streaming_consumer_mapping(proj, ARCH, sm)
        assert proj_tm is not None
        prog = lower_streamed_pair(exp, proj, ARCH, exp_sm=sm, proj_sm=sm,
                                   exp_tm=exp_tm, proj_tm=proj_tm,
                                   exp_inputs=[in_view],
                                   exp_weights=we_view,
                                   proj_weights=wp_view, out=out)
        res = m.run(list(prog) + [Halt()])
        exp_cost = evaluate_layer(exp, ARCH, sm, exp_tm,
                                  weight_dram_bytes=we.size,
                                  output_to_dram=False, drain_to_peer=True)
        proj_cost = evaluate_layer(proj, ARCH, sm, proj_tm,
                                   input_dram_bytes=0,
                                   weight_dram_bytes=wp.size,
                                   output_to_dram=True,
                                   input_from_peer=True)
    else:
        proj_tm = canonical_mapping(proj, ARCH, sm)
        mid_bytes = exp.out_elements()
        prog1 = lower_layer(
            exp, ARCH, sm, exp_tm, inputs=[in_view],
            weights=we_view,
            out=OutView(LVL_SRAM, S_OUT, 1,
                        mid_bytes, exp.dims.oy * exp.dims.k, exp.dims.k, 1))
        be, Xe, Ye, Ce = exp.out_shape()
        park = ActView(LVL_SRAM, S_OUT, be, Xe, Ye, Ce,
                       Xe * Ye * Ce, Ye * Ce, Ce, 1)
        need = staging_needs(proj, ARCH, sm, proj_tm, input_in_dram=False,
                             weights_in_dram=True)
        kw = {"weight_stage": S_WSTAGE} if need["weight_stage"] else {}
        prog2 = lower_layer(proj, ARCH, sm, proj_tm, inputs=[park],
                            weights=wp_view, out=out, **kw)
        prog = list(prog1) + [Sync()] + list(prog2)
        res = m.run(prog + [Halt()])
        exp_cost = evaluate_layer(exp, ARCH, sm, exp_tm,
                                  weight_dram_bytes=we.size,
                                  output_to_dram=False)
        proj_cost = evaluate_layer(proj, ARCH, sm, proj_tm,
                                   input_dram_bytes=0,
                                   weight_dram_bytes=wp.size,
                                   output_to_dram=True)
    merged = exp_cost.merged_with(proj_cost, "pair")
    got = read_out(m, proj, LVL_DRAM, OUT0, 1)
    return res, got, ref_to_mem(proj, ref), merged, m


def test_streamed_pair_bits_and_isolation():
    exp, proj = _pair_specs()
    res, got, want, merged, m = _run_pair(exp, proj, 91, streamed=True)
    assert (got == want).all()
    # the intermediate tensor exists nowhere: no scratchpad traffic at
    # all, and DRAM only sees inputs, weights and the final output
    assert res.access_bytes[LEVEL_SRAM] == 0
    assert res.dram_writes == [(OUT0, proj.out_elements())]
    assert res.access_bytes == merged.access_bytes


def test_streamed_pair_cycles_close_to_model():
    exp, proj = _pair_specs(k_mid=48, ch=16, side=8)
    res, got, want, merged, _ = _run_pair(exp, proj, 92, streamed=True)
    assert (got == want).all()
    assert res.cycles <= merged.total_cycles * 1.10
    assert res.cycles >= merged.total_cycles * 0.75


def test_parked_pair_bits_and_parity():
    exp, proj = _pair_specs(k_mid=40, ch=8, side=4)
    res, got, want, merged, m = _run_pair(exp, proj, 93, streamed=False)
    assert (got == want).all()
    assert res.access_bytes == merged.access_bytes
    # parked intermediate never crosses the DRAM bus
    assert res.dram_writes == [(OUT0, proj.out_elements())]


def test_streamed_pair_rejects_channel_passes():
    # an expand half that cycles output-channel groups outside the pixel
    # loop cannot hand tiles over one by one
    exp, proj = _pair_specs(k_mid=48, ch=8, side=4)
    exp_tm = _tm(("k", "pix", "c"), 16, 16, 8)
    sm = select_dataflow(exp)
    proj_tm = streaming_consumer_mapping(proj, ARCH, sm)
    in_view = ActView(LVL_DRAM, IN0, 1, 4, 4, 8, 128, 32, 8, 1)
    out = OutView(LVL_DRAM, OUT0, 1, 128, 32, 8, 1)
    with pytest.raises(PlacementError):
        lower_streamed_pair(exp, proj, ARCH, exp_sm=sm, proj_sm=sm,
                            exp_tm=exp_tm, proj_tm=proj_tm,
                            exp_inputs=[in_view],
                            exp_weights=weight_view(exp, LVL_DRAM, W0),
                            proj_weights=weight_view(proj, LVL_DRAM, 4096),
                            out=out)


def test_streamed_pair_rejects_normalization():
    exp, proj = _pair_specs()
    exp = LayerSpec(exp.name, exp.kind, exp.dims, exp.inputs,
                    post_ops=list(CHAINS["ln_rq"]))
    sm = select_dataflow(exp)
    in_view = ActView(LVL_DRAM, IN0, 1, 4, 4, 8, 128, 32, 8, 1)
    out = OutView(LVL_DRAM, OUT0, 1, 128, 32, 8, 1)
    with pytest.raises(PlacementError):
        lower_streamed_pair(exp, proj, ARCH, exp_sm=sm, proj_sm=sm,
                            exp_tm=canonical_mapping(exp, ARCH, sm),
                            proj_tm=streaming_consumer_mapping(proj, ARCH, sm),
                            exp_inputs=[in_view],
                            exp_weights=weight_view(exp, LVL_DRAM, W0),
                            proj_weights=weight_view(proj, LVL_DRAM, 4096),
                            out=out)


def test_streamed_pair_rejects_mismatched_extents():
    exp, _ = _pair_specs()
    proj = LayerSpec("p", KIND_PW, LayerDims(b=1, k=8, c=24, ox=2, oy=2),
                     ["e"], post_ops=[PostOp(POST_REQUANT, (19, 12))])
    sm = select_dataflow(exp)
    in_view = ActView(LVL_DRAM, IN0, 1, 4, 4, 8, 128, 32, 8, 1)
    out = OutView(LVL_DRAM, OUT0, 1, 32, 16, 8, 1)
    with pytest.raises(PlacementError):
        lower_streamed_pair(exp, proj, ARCH, exp_sm=sm, proj_sm=sm,
                            exp_tm=canonical_mapping(exp, ARCH, sm),
                            proj_tm=streaming_consumer_mapping(proj, ARCH, sm),
                            exp_inputs=[in_view],
                            exp_weights=weight_view(exp, LVL_DRAM, W0),
                            proj_weights=weight_view(proj, LVL_DRAM, 4096),
                            out=out)


# --------------------------------------------------------------------------
# Guard rails.
# --------------------------------------------------------------------------

def test_refetch_needs_weight_stage():
    spec = mk_spec(KIND_PW, "rq", b=1, k=16, c=80, ox=8, oy=8)
    tm = _tm(("k", "pix", "c"), 16, 16, 16)
    sm = select_dataflow(spec)
    in_view = ActView(LVL_DRAM, IN0, 1, 8, 8, 80, 8 * 8 * 80, 8 * 80, 80, 1)
    out = OutView(LVL_DRAM, OUT0, 1, 8 * 8 * 16, 8 * 16, 16, 1)
    with pytest.raises(PlacementError, match="stag"):
        lower_layer(spec, ARCH, sm, tm, inputs=[in_view],
                    weights=weight_view(spec, LVL_DRAM, W0), out=out)


def test_multi_pass_dram_input_needs_stage():
    spec = mk_spec(KIND_PW, "rq", b=1, k=32, c=1024, ox=4, oy=4)
    tm = _tm(("k", "pix", "c"), 16, 16, 512)
    sm = select_dataflow(spec)
    in_view = ActView(LVL_DRAM, IN0, 1, 4, 4, 1024,
                      16 * 1024, 4 * 1024, 1024, 1)
    out = OutView(LVL_DRAM, OUT0, 1, 16 * 32, 4 * 32, 32, 1)
    with pytest.raises(PlacementError, match="stag"):
        lower_layer(spec, ARCH, sm, tm, inputs=[in_view],
                    weights=weight_view(spec, LVL_DRAM, W0), out=out,
                    weight_stage=S_WSTAGE)


def test_vector_chain_needs_pixelwise_or_deferral():
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=24, c=16, ox=4, oy=4)
    sm = select_dataflow(spec)
    tm = canonical_mapping(spec, ARCH, sm, force_pixelwise=False)
    in_view = ActView(LVL_DRAM, IN0, 1, 4, 4, 16, 256, 64, 16, 1)
    out = OutView(LVL_DRAM, OUT0, 1, 16 * 24, 4 * 24, 24, 1)
    with pytest.raises(PlacementError, match="vector|chain"):
        lower_layer(spec, ARCH, sm, tm, inputs=[in_view],
                    weights=weight_view(spec, LVL_DRAM, W0), out=out,
                    gamma_addr=G0, beta_addr=B0)


def test_output_width_must_match_chain():
    spec = mk_spec(KIND_PW, "none", b=1, k=16, c=16, ox=4, oy=4)
    sm = select_dataflow(spec)
    tm = canonical_mapping(spec, ARCH, sm)
    in_view = ActView(LVL_DRAM, IN0, 1, 4, 4, 16, 256, 64, 16, 1)
    out = OutView(LVL_DRAM, OUT0, 1, 16 * 16, 4 * 16, 16, 1)  # int8 view
    with pytest.raises(PlacementError, match="width|byte"):
        lower_layer(spec, ARCH, sm, tm, inputs=[in_view],
                    weights=weight_view(spec, LVL_DRAM, W0), out=out)


def test_strided_2d_window_rejected():
    # a channel-strided view can only feed line-shaped windows
    spec = mk_spec(KIND_PW, "rq", b=1, k=8, c=8, ox=4, oy=4)
    sm = select_dataflow(spec)
    tm = _tm(("k", "pix", "c"), 16, 8, 8)   # one (4, 4) tile
    bad = ActView(LVL_DRAM, IN0, 1, 4, 4, 8, sb=128, sx=4, sy=1, sc=16)
    out = OutView(LVL_DRAM, OUT0, 1, 16 * 8, 4 * 8, 8, 1)
    with pytest.raises(PlacementError, match="window|strid"):
        lower_layer(spec, ARCH, sm, tm, inputs=[bad],
                    weights=weight_view(spec, LVL_DRAM, W0), out=out)


def test_deferred_raw_capacity_floor():
    spec = mk_spec(KIND_PW, "ln_rq", b=1, k=16, c=16, ox=8, oy=8)
    sm = select_dataflow(spec)
    tm = canonical_mapping(spec, ARCH, sm, force_pixelwise=False)
    in_view = ActView(LVL_DRAM, IN0, 1, 8, 8, 16, 1024, 128, 16, 1)
    out = OutView(LVL_SRAM, S_OUT, 1, 64 * 16, 8 * 16, 16, 1)
    need = staging_needs(spec, ARCH, sm, tm, input_in_dram=True,
                         weights_in_dram=True, deferred=True)
    with pytest.raises(PlacementError, match="raw|buffer"):
        lower_layer(spec, ARCH, sm, tm, inputs=[in_view],
                    weights=weight_view(spec, LVL_DRAM, W0), out=out,
                    deferred=True, raw_addr=S_RAW,
                    raw_capacity=need["raw_min"] - 1,
                    gamma_addr=G0, beta_addr=B0)


def test_staging_needs_reports_sizes():
    spec = mk_spec(KIND_PW, "rq", b=1, k=16, c=80, ox=8, oy=8)
    tm = _tm(("k", "pix", "c"), 16, 16, 16)
    sm = select_dataflow(spec)
    need = staging_needs(spec, ARCH, sm, tm, input_in_dram=True,
                         weights_in_dram=True)
    assert need["weight_stage"] == 16 * 80
    assert need["input_stage"] == 0          # single pass
    clean = staging_needs(spec, ARCH, sm, canonical_mapping(spec, ARCH, sm),
                          input_in_dram=True, weights_in_dram=True)
    assert clean["weight_stage"] == 0


# --------------------------------------------------------------------------
# Property: random mappings agree with the reference.
# --------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.data())
def test_property_pw_mappings_bit_exact(data):
    k = data.draw(st.sampled_from([8, 12, 16, 24, 32]), label="k")
    c = data.draw(st.sampled_from([8, 16, 20, 32]), label="c")
    ox = data.draw(st.sampled_from([2, 4, 6]), label="ox")
    oy = data.draw(st.sampled_from([2, 4, 5]), label="oy")
    chain = data.draw(st.sampled_from(["none", "rq", "act_rq"]),
                      label="chain")
    spec = mk_spec(KIND_PW, chain, b=1, k=k, c=c, ox=ox, oy=oy)
    sm = select_dataflow(spec)
    tms = list(enumerate_temporal_mappings(spec, ARCH, sm, limit=64))
    tm = data.draw(st.sampled_from(tms), label="tm")
    if tm.pixelwise and spec.out_bits() == 32:
        tm = canonical_mapping(spec, ARCH, sm)
    seed = data.draw(st.integers(0, 2 ** 16), label="seed")
    r = run_layer(spec, seed, tm=tm)
    assert (r["got"] == r["want"]).all()


@settings(max_examples=15, deadline=None)
@given(st.data())
def test_property_conv_canonical_bit_exact(data):
    k = data.draw(st.sampled_from([4, 8, 12]), label="k")
    c = data.draw(st.sampled_from([3, 8, 16]), label="c")
    side = data.draw(st.sampled_from([3, 5, 8]), label="side")
    f = data.draw(st.sampled_from([1, 3, 5]), label="f")
    pad = data.draw(st.sampled_from([0, f // 2]), label="pad")
    spec = LayerSpec("t", KIND_CONV,
                     LayerDims(b=1, k=k, c=c, ox=side, oy=side, fx=f, fy=f),
                     ["a"], pad=(pad, pad),
                     post_ops=list(CHAINS["rq"]))
    seed = data.draw(st.integers(0, 2 ** 16), label="seed")
    r = run_layer(spec, seed)
    assert (r["got"] == r["want"]).all()
