"""Workload representation: loop-nest layers wired into a network graph.

A layer is described by its seven loop dimensions (B, K, C, OX, OY, FX, FY),
strides/padding, operator kind and an ordered chain of post-processing ops
(activation, layernorm, softmax, requantize) that ride the write-back path.
Activations and weights are signed 8-bit, accumulators 32-bit.

The module also ships a builder for an EdgeNeXt-S class hybrid network
(convolutional stem/stages with inverted-bottleneck blocks plus
channel-attention transformer blocks) whose dimensions are pinned from the
public model definition, and a strict line-oriented text format so network
configs can be stored next to experiments.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

__all__ = [
    "KIND_CONV", "KIND_DWCONV", "KIND_PW", "KIND_GEMM", "KIND_ADD",
    "OPERATOR_KINDS", "PostOp", "LayerDims", "LayerSpec", "TensorDef",
    "NetworkGraph", "layer_macs", "requant_params_for", "REQUANT_CLAMP",
    "build_edgenext_s", "parse_network_config", "serialize_network_config",
]

KIND_CONV = "conv2d"
KIND_DWCONV = "dwconv2d"
KIND_PW = "pwconv"
KIND_GEMM = "gemm"
KIND_ADD = "add"

OPERATOR_KINDS = (KIND_CONV, KIND_DWCONV, KIND_PW, KIND_GEMM, KIND_ADD)

MAC_KINDS = (KIND_CONV, KIND_DWCONV, KIND_PW, KIND_GEMM)

POST_ACT = "act"
POST_LAYERNORM = "ln"
POST_SOFTMAX = "sm"
POST_REQUANT = "rq"

SUPPORTED_KERNELS = (1, 2, 3, 4, 5, 7, 9, 11)
SUPPORTED_STRIDES = (1, 2, 4)


@dataclass(frozen=True)
class PostOp:
    """One stage of the write-back post-processing chain.

    kinds and params:
      act  -- params: ('relu',)
      ln   -- params: (out_mult, out_shift); per-channel scale/offset
              tables are runtime tensors supplied by the driver
      sm   -- params: (in_mult, in_shift, out_mult, out_shift)
      rq   -- params: (mult, shift); round-half-away-from-zero, then
              saturate to signed 8-bit
    """

    kind: str
    params: Tuple = ()

    def __post_init__(self):
        if self.kind == POST_ACT:
            if len(self.params) != 1 or self.params[0] != "relu":
                raise ValueError(f"unsupported activation params {self.params}")
        elif self.kind == POST_LAYERNORM:
            if len(self.params) != 2:
                raise ValueError("ln expects (out_mult, out_shift)")
        elif self.kind == POST_SOFTMAX:
            if len(self.params) != 4:
                raise ValueError("sm expects (in_mult, in_shift, out_mult, out_shift)")
            in_mult, in_shift, out_mult, out_shift = self.params
            if not (0 <= in_shift <= 47 and 0 <= out_shift <= 47):
                raise ValueError("softmax shift out of range")
        elif self.kind == POST_REQUANT:
            if len(self.params) != 2:
                raise ValueError("rq expects (mult, shift)")
            mult, shift = self.params
            if not (0 <= shift <= 31):
                raise ValueError("requantization shift out of range (0..31)")
            if not (0 < mult < 2 ** 31):
                raise ValueError("requantization multiplier out of range")
        else:
            raise ValueError(f"unknown post-op kind '{self.kind}'")

    def encode(self) -> str:
        if self.kind == POST_ACT:
            return f"act:{self.params[0]}"
        return ":".join([self.kind] + [str(p) for p in self.params])

    @staticmethod
    def decode(text: str) -> "PostOp":
        parts = text.split(":")
        kind = parts[0]
        if kind == POST_ACT:
            return PostOp(POST_ACT, (parts[1],))
        try:
            params = tuple(int(p) for p in parts[1:])
        except ValueError:
            raise ValueError(f"bad post-op parameters in '{text}'") from None
        return PostOp(kind, params)


@dataclass(frozen=True)
class LayerDims:
    """Loop-nest extents.  All default to 1 so partial updates stay valid."""

    b: int = 1
    k: int = 1
    c: int = 1
    ox: int = 1
    oy: int = 1
    fx: int = 1
    fy: int = 1

    def as_dict(self) -> Dict[str, int]:
        return {"b": self.b, "k": self.k, "c": self.c, "ox": self.ox,
                "oy": self.oy, "fx": self.fx, "fy": self.fy}


@dataclass
class LayerSpec:
    """One operator instance in the network graph.

    ``inputs`` are upstream tensor names ('@input' refers to the graph
    input).  For GeMM the optional ``weight_input`` points the stationary
    operand at another tensor edge (attention reads both operands from
    activations); when it is None the weights are layer parameters.
    """

    name: str
    kind: str
    dims: LayerDims
    inputs: List[str]
    weight_input: Optional[str] = None
    stride: Tuple[int, int] = (1, 1)
    pad: Tuple[int, int] = (0, 0)
    post_ops: List[PostOp] = field(default_factory=list)
    block: str = "cnn"              # ds | cnn | vit
    ib_tag: Optional[Tuple[str, str]] = None   # (pair id, 'expand'|'project')

    # -- derived geometry -------------------------------------------------

    @property
    def out_channels(self) -> int:
        d = self.dims
        if self.kind == KIND_DWCONV:
            return d.c
        if self.kind == KIND_ADD:
            return d.c
        return d.k

    def out_shape(self) -> Tuple[int, int, int, int]:
        """(b, x, y, c) of the produced tensor."""
        d = self.dims
        return (d.b, d.ox, d.oy, self.out_channels)

    def out_elements(self) -> int:
        b, x, y, c = self.out_shape()
        return b * x * y * c

    def out_bits(self) -> int:
        for op in reversed(self.post_ops):
            if op.kind in (POST_REQUANT, POST_SOFTMAX):
                return 8
        return 32

    def out_bytes(self) -> int:
        return self.out_elements() * self.out_bits() // 8

    def in_spatial(self) -> Tuple[int, int]:
        """Input extent covered by the output tile, without padding."""
        d = self.dims
        sx, sy = self.stride
        px, py = self.pad
        ix = (d.ox - 1) * sx + d.fx - 2 * px
        iy = (d.oy - 1) * sy + d.fy - 2 * py
        return ix, iy

    def in_elements(self) -> int:
        d = self.dims
        if self.kind == KIND_GEMM:
            return d.b * d.ox * d.c
        if self.kind == KIND_ADD:
            return self.out_elements()
        ix, iy = self.in_spatial()
        return d.b * ix * iy * d.c

    def in_bytes(self) -> int:
        return self.in_elements()        # 8-bit activations

    def weight_elements(self) -> int:
        d = self.dims
        if self.kind == KIND_CONV:
            return d.k * d.c * d.fx * d.fy
        if self.kind == KIND_DWCONV:
            return d.c * d.fx * d.fy
        if self.kind == KIND_PW:
            return d.k * d.c
        if self.kind == KIND_GEMM:
            return d.b * d.k * d.c
        return 0

    def weight_bytes(self) -> int:
        return self.weight_elements()    # 8-bit weights

    def has_post(self, kind: str) -> bool:
        return any(op.kind == kind for op in self.post_ops)

    def get_post(self, kind: str) -> Optional[PostOp]:
        for op in self.post_ops:
            if op.kind == kind:
                return op
        return None

    def validate(self) -> None:
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"{self.name}: unknown operator kind '{self.kind}'")
        d = self.dims
        for key, value in d.as_dict().items():
            if value < 1:
                raise ValueError(f"{self.name}: dim {key}={value} must be >= 1")
        if self.kind in (KIND_CONV, KIND_DWCONV):
            if d.fx not in SUPPORTED_KERNELS or d.fy not in SUPPORTED_KERNELS:
                raise ValueError(f"{self.name}: unsupported kernel {d.fx}x{d.fy}")
        if self.kind in (KIND_PW, KIND_GEMM, KIND_ADD) and (d.fx != 1 or d.fy != 1):
            raise ValueError(f"{self.name}: {self.kind} requires 1x1 kernel")
        if self.stride[0] not in SUPPORTED_STRIDES or self.stride[1] not in SUPPORTED_STRIDES:
            raise ValueError(f"{self.name}: unsupported stride {self.stride}")
        if self.kind in (KIND_PW, KIND_GEMM, KIND_ADD) and self.stride != (1, 1):
            raise ValueError(f"{self.name}: {self.kind} must be stride 1")
        ix, iy = self.in_spatial()
        if ix < 1 or iy < 1:
            raise ValueError(f"{self.name}: output extent inconsistent with "
                             f"stride/pad (input {ix}x{iy})")
        if self.kind == KIND_ADD and len(self.inputs) != 2:
            raise ValueError(f"{self.name}: add takes exactly two inputs")
        if self.kind != KIND_ADD and len(self.inputs) != 1:
            raise ValueError(f"{self.name}: {self.kind} takes exactly one input")
        if self.weight_input is not None and self.kind != KIND_GEMM:
            raise ValueError(f"{self.name}: only gemm may source weights from an edge")
        seen = set()
        for op in self.post_ops:
            if op.kind in seen:
                raise ValueError(f"{self.name}: duplicate post-op '{op.kind}'")
            seen.add(op.kind)
        if self.has_post(POST_SOFTMAX) and self.has_post(POST_LAYERNORM):
            raise ValueError(f"{self.name}: layernorm and softmax cannot be chained")
        if self.has_post(POST_SOFTMAX) and self.has_post(POST_REQUANT):
            raise ValueError(f"{self.name}: softmax already requantizes")


def layer_macs(spec: LayerSpec) -> int:
    """Exact MAC count of one layer (one multiply-accumulate = one MAC)."""
    d = spec.dims
    if spec.kind == KIND_CONV:
        return d.b * d.k * d.c * d.ox * d.oy * d.fx * d.fy
    if spec.kind == KIND_DWCONV:
        return d.b * d.c * d.ox * d.oy * d.fx * d.fy
    if spec.kind == KIND_PW:
        return d.b * d.k * d.c * d.ox * d.oy
    if spec.kind == KIND_GEMM:
        return d.b * d.k * d.c * d.ox
    return 0


@dataclass(frozen=True)
class TensorDef:
    """A named graph input tensor (x, y, c at 8-bit)."""

    name: str
    x: int
    y: int
    c: int

    def bytes(self) -> int:
        return self.x * self.y * self.c


class NetworkGraph:
    """Ordered collection of layers plus the tensors wiring them together."""

    def __init__(self, name: str, inputs: Sequence[TensorDef],
                 layers: Sequence[LayerSpec]):
        self.name = name
        self.inputs = list(inputs)
        self.layers = list(layers)
        self.by_name: Dict[str, LayerSpec] = {}
        for spec in self.layers:
            if spec.name in self.by_name:
                raise ValueError(f"duplicate layer name '{spec.name}'")
            self.by_name[spec.name] = spec
        self.validate()

    # -- lookups ----------------------------------------------------------

    def producer_bytes(self, tensor: str) -> int:
        for t in self.inputs:
            if t.name == tensor:
                return t.bytes()
        if tensor in self.by_name:
            return self.by_name[tensor].out_bytes()
        raise KeyError(f"unknown tensor '{tensor}'")

    def consumers(self, tensor: str) -> List[LayerSpec]:
        out = []
        for spec in self.layers:
            if tensor in spec.inputs or spec.weight_input == tensor:
                out.append(spec)
        return out

    def total_macs(self) -> int:
        return sum(layer_macs(spec) for spec in self.layers)

    def total_weight_bytes(self) -> int:
        return sum(spec.weight_bytes() for spec in self.layers
                   if spec.weight_input is None)

    def ib_pairs(self) -> Dict[str, Dict[str, LayerSpec]]:
        pairs: Dict[str, Dict[str, LayerSpec]] = {}
        for spec in self.layers:
            if spec.ib_tag is not None:
                pair_id, role = spec.ib_tag
                pairs.setdefault(pair_id, {})[role] = spec
        return pairs

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        defined = {t.name for t in self.inputs}
        for spec in self.layers:
            spec.validate()
            refs = list(spec.inputs)
            if spec.weight_input is not None:
                refs.append(spec.weight_input)
            for ref in refs:
                if ref not in defined:
                    raise ValueError(f"{spec.name}: input '{ref}' is not defined "
                                     "before use")
            self._check_edge_shapes(spec)
            defined.add(spec.name)
        self._check_ib_pairs()

    def _check_edge_shapes(self, spec: LayerSpec) -> None:
        if spec.kind == KIND_ADD:
            for ref in spec.inputs:
                if self.producer_bytes(ref) != spec.out_elements():
                    raise ValueError(f"{spec.name}: add operand '{ref}' has "
                                     f"{self.producer_bytes(ref)} bytes, "
                                     f"expected {spec.out_elements()}")
            return
        need = spec.in_bytes()
        got = self.producer_bytes(spec.inputs[0])
        if need != got:
            raise ValueError(f"{spec.name}: input '{spec.inputs[0]}' provides "
                             f"{got} bytes but the layer consumes {need}")
        if spec.weight_input is not None:
            d = spec.dims
            need_w = d.b * d.k * d.c
            got_w = self.producer_bytes(spec.weight_input)
            if need_w != got_w:
                raise ValueError(f"{spec.name}: weight edge '{spec.weight_input}' "
                                 f"provides {got_w} bytes, expected {need_w}")

    def _check_ib_pairs(self) -> None:
        for pair_id, roles in self.ib_pairs().items():
            if set(roles) != {"expand", "project"}:
                raise ValueError(f"IB pair '{pair_id}' must have exactly an "
                                 "expand and a project layer")
            expand, project = roles["expand"], roles["project"]
            if expand.kind != KIND_PW or project.kind != KIND_PW:
                raise ValueError(f"IB pair '{pair_id}' must consist of "
                                 "pointwise layers")
            if not expand.has_post(POST_ACT):
                raise ValueError(f"IB pair '{pair_id}': expand layer misses the "
                                 "activation between the two projections")
            if project.inputs != [expand.name]:
                raise ValueError(f"IB pair '{pair_id}': project must consume the "
                                 "expand output directly")
            if project.dims.c != expand.dims.k:
                raise ValueError(f"IB pair '{pair_id}': channel mismatch between "
                                 "expand and project")


# --------------------------------------------------------------------------
# Requantization parameter selection.
# --------------------------------------------------------------------------

def requant_params_for(reduction: int, gain: float = 73.0) -> Tuple[int, int]:
    """Multiplier/shift pair scaling an accumulator back into int8 range.

    Accumulating ``reduction`` products of two roughly uniform int8 values
    grows the magnitude by about gain*sqrt(reduction); dividing by that keeps
    the value distribution stable from layer to layer, which is what the
    randomized functional tests need.  Deterministic, so configs are stable.
    """

    if reduction < 1:
        raise ValueError("reduction must be >= 1")
    target = gain * (reduction ** 0.5)
    shift = 14
    while shift < 31 and (1 << shift) / target < (1 << 14):
        shift += 1
    mult = max(1, round((1 << shift) / target))
    return mult, shift


def _softmax_params(reduction: int) -> Tuple[int, int, int, int]:
    """Input log2-domain scale plus output scale for attention softmax."""
    sigma = 1600.0 * (reduction ** 0.5)     # expected logit spread
    in_shift = 31
    in_mult = max(1, round(512.0 * (1 << in_shift) / sigma / 4.0))
    return in_mult, in_shift, 127, 16


def _ln_params() -> Tuple[int, int]:
    # Maps a unit-variance channel vector to roughly +/-120 after the
    # per-channel scale; (out_mult, out_shift) applied to a Q16 value.
    return 30, 16


# Layernorm already lands in int8 range, so the requantization that
# follows it only narrows and clamps: v * 2^14 >> 14 is exact.
REQUANT_CLAMP = (1 << 14, 14)


# --------------------------------------------------------------------------
# EdgeNeXt-S class network builder.
# --------------------------------------------------------------------------

def build_edgenext_s(resolution: int = 256,
                     stage_channels: Sequence[int] = (48, 96, 160, 304),
                     depths: Sequence[int] = (3, 3, 9, 3),
                     kernel_sizes: Sequence[int] = (3, 5, 7, 9),
                     attn_blocks: Sequence[int] = (0, 1, 1, 1),
                     expand_ratio: int = 4,
                     heads: int = 8,
                     name: str = "edgenext_s") -> NetworkGraph:
    """Build the hybrid conv/attention backbone used throughout the package.

    Defaults pin the small variant from the public EdgeNeXt definition:
    four stages of [3, 3, 9, 3] blocks at 48/96/160/304 channels, stage
    kernels 3/5/7/9, 4x inverted bottlenecks and one channel-attention
    transformer block closing each of the last three stages.  The stem
    reduces by 4, each downsampler by 2, so resolution must divide by 32.

    Fixture notes (deliberate simplifications, all cost-neutral at network
    scale): the multi-scale split of the transformer block's depthwise part
    is modeled as one full-width 3x3 depthwise layer; query/key L2
    normalization and learned temperatures are folded into the softmax
    input scale; activations are modeled as ReLU; the classifier head
    (pool + linear, <0.03% of the MACs) is out of scope.
    """

    if resolution % 32:
        raise ValueError("resolution must be divisible by 32")
    if len(stage_channels) != 4 or len(depths) != 4:
        raise ValueError("expected four stages")
    for i, ch in enumerate(stage_channels):
        if i > 0 and attn_blocks[i] and ch % heads:
            raise ValueError(f"stage {i} channels {ch} not divisible by "
                             f"{heads} heads")

    layers: List[LayerSpec] = []
    image = TensorDef("image", resolution, resolution, 3)

    def rq(reduction: int) -> PostOp:
        return PostOp(POST_REQUANT, requant_params_for(reduction))

    def ln() -> PostOp:
        return PostOp(POST_LAYERNORM, _ln_params())

    def add_layer(spec: LayerSpec) -> str:
        layers.append(spec)
        return spec.name

    # Stem: 4x4 stride-4 convolution + norm.
    res = resolution // 4
    prev = add_layer(LayerSpec(
        name="stem", kind=KIND_CONV,
        dims=LayerDims(k=stage_channels[0], c=3, ox=res, oy=res, fx=4, fy=4),
        inputs=["image"], stride=(4, 4), pad=(0, 0),
        post_ops=[ln(), _clamp_rq()], block="ds"))

    for stage in range(4):
        ch = stage_channels[stage]
        ksz = kernel_sizes[stage]
        n_attn = attn_blocks[stage]
        n_conv = depths[stage] - n_attn
        if stage > 0:
            res //= 2
            prev = add_layer(LayerSpec(
                name=f"ds{stage}", kind=KIND_CONV,
                dims=LayerDims(k=ch, c=stage_channels[stage - 1],
                               ox=res, oy=res, fx=2, fy=2),
                inputs=[prev], stride=(2, 2), pad=(0, 0),
                post_ops=[rq(stage_channels[stage - 1] * 4)], block="ds"))
        for blk in range(n_conv):
            prev = _conv_block(layers, f"s{stage}b{blk}", prev, ch, ksz, res,
                               expand_ratio, rq, ln)
        for blk in range(n_attn):
            prev = _attn_block(layers, f"s{stage}t{blk}", prev, ch, res,
                               expand_ratio, heads, rq, ln)
        # Norm ahead of the next downsampler rides the last block's output.
        if stage < 3:
            layers[-1].post_ops = _with_ln(layers[-1].post_ops, ln())

    return NetworkGraph(name, [image], layers)


def _clamp_rq() -> PostOp:
    return PostOp(POST_REQUANT, REQUANT_CLAMP)


def _with_ln(post_ops: List[PostOp], ln_op: PostOp) -> List[PostOp]:
    """Insert a layernorm ahead of the final requantization.

    The requantization multiplier then switches to the clamp pair: the
    norm replaces the accumulator scale entirely.
    """
    out = [op for op in post_ops if op.kind != POST_REQUANT]
    if any(op.kind in (POST_LAYERNORM, POST_SOFTMAX) for op in out):
        return post_ops
    return out + [ln_op, _clamp_rq()]


def _conv_block(layers, tag, block_in, ch, ksz, res, ratio, rq, ln) -> str:
    """Depthwise conv + norm, then a 4x inverted bottleneck, residual add."""
    hidden = ratio * ch
    dw = LayerSpec(
        name=f"{tag}_dw", kind=KIND_DWCONV,
        dims=LayerDims(c=ch, ox=res, oy=res, fx=ksz, fy=ksz),
        inputs=[block_in], stride=(1, 1), pad=(ksz // 2, ksz // 2),
        post_ops=[ln(), _clamp_rq()], block="cnn")
    pw1 = LayerSpec(
        name=f"{tag}_pw1", kind=KIND_PW,
        dims=LayerDims(k=hidden, c=ch, ox=res, oy=res),
        inputs=[dw.name],
        post_ops=[PostOp(POST_ACT, ("relu",)), rq(ch)], block="cnn",
        ib_tag=(tag, "expand"))
    pw2 = LayerSpec(
        name=f"{tag}_pw2", kind=KIND_PW,
        dims=LayerDims(k=ch, c=hidden, ox=res, oy=res),
        inputs=[pw1.name], post_ops=[rq(hidden)], block="cnn",
        ib_tag=(tag, "project"))
    add = LayerSpec(
        name=f"{tag}_add", kind=KIND_ADD,
        dims=LayerDims(c=ch, ox=res, oy=res),
        inputs=[block_in, pw2.name], post_ops=[rq(2)], block="cnn")
    layers.extend([dw, pw1, pw2, add])
    return add.name


def _attn_block(layers, tag, block_in, ch, res, ratio, heads, rq, ln) -> str:
    """Transformer block: depthwise mix, channel attention, bottleneck MLP."""
    hidden = ratio * ch
    tokens = res * res
    d = ch // heads
    dw = LayerSpec(
        name=f"{tag}_dw", kind=KIND_DWCONV,
        dims=LayerDims(c=ch, ox=res, oy=res, fx=3, fy=3),
        inputs=[block_in], stride=(1, 1), pad=(1, 1),
        post_ops=[ln(), _clamp_rq()], block="vit")
    layers.append(dw)
    qkv = {}
    for which in ("q", "k", "v"):
        spec = LayerSpec(
            name=f"{tag}_{which}", kind=KIND_PW,
            dims=LayerDims(k=ch, c=ch, ox=res, oy=res),
            inputs=[dw.name], post_ops=[rq(ch)], block="vit")
        layers.append(spec)
        qkv[which] = spec.name
    # Channel attention: scores over the d x d channel slice of each head,
    # reduced across all tokens; softmax rides the write-back of the score
    # matrix, then the value projection restores the token layout.
    scores = LayerSpec(
        name=f"{tag}_qk", kind=KIND_GEMM,
        dims=LayerDims(b=heads, k=d, c=tokens, ox=d),
        inputs=[qkv["q"]], weight_input=qkv["k"],
        post_ops=[PostOp(POST_SOFTMAX, _softmax_params(tokens))], block="vit")
    att = LayerSpec(
        name=f"{tag}_av", kind=KIND_GEMM,
        dims=LayerDims(b=heads, k=tokens, c=d, ox=d),
        inputs=[scores.name], weight_input=qkv["v"],
        post_ops=[rq(d)], block="vit")
    proj = LayerSpec(
        name=f"{tag}_proj", kind=KIND_PW,
        dims=LayerDims(k=ch, c=ch, ox=res, oy=res),
        inputs=[att.name], post_ops=[rq(ch)], block="vit")
    attn_add = LayerSpec(
        name=f"{tag}_attadd", kind=KIND_ADD,
        dims=LayerDims(c=ch, ox=res, oy=res),
        inputs=[dw.name, proj.name],
        post_ops=[ln(), _clamp_rq()], block="vit")
    mlp1 = LayerSpec(
        name=f"{tag}_mlp1", kind=KIND_PW,
        dims=LayerDims(k=hidden, c=ch, ox=res, oy=res),
        inputs=[attn_add.name],
        post_ops=[PostOp(POST_ACT, ("relu",)), rq(ch)], block="vit",
        ib_tag=(tag, "expand"))
    mlp2 = LayerSpec(
        name=f"{tag}_mlp2", kind=KIND_PW,
        dims=LayerDims(k=ch, c=hidden, ox=res, oy=res),
        inputs=[mlp1.name], post_ops=[rq(hidden)], block="vit",
        ib_tag=(tag, "project"))
    out = LayerSpec(
        name=f"{tag}_add", kind=KIND_ADD,
        dims=LayerDims(c=ch, ox=res, oy=res),
        inputs=[block_in, mlp2.name], post_ops=[rq(2)], block="vit")
    layers.extend([scores, att, proj, attn_add, mlp1, mlp2, out])
    return out.name


# --------------------------------------------------------------------------
# Text config format.
# --------------------------------------------------------------------------

_LAYER_INT_KEYS = ("b", "k", "c", "ox", "oy", "fx", "fy", "sx", "sy",
                   "px", "py")


def serialize_network_config(graph: NetworkGraph) -> str:
    """Emit the line-oriented config format (one layer per line)."""
    lines = ["# vitaccel network config v1", f"network {graph.name}"]
    for t in graph.inputs:
        lines.append(f"input {t.name} x={t.x} y={t.y} c={t.c}")
    for spec in graph.layers:
        d = spec.dims
        fields = [f"layer {spec.name}", f"kind={spec.kind}",
                  "in=" + ",".join(spec.inputs)]
        if spec.weight_input is not None:
            fields.append(f"win={spec.weight_input}")
        for key, val in (("b", d.b), ("k", d.k), ("c", d.c), ("ox", d.ox),
                         ("oy", d.oy), ("fx", d.fx), ("fy", d.fy),
                         ("sx", spec.stride[0]), ("sy", spec.stride[1]),
                         ("px", spec.pad[0]), ("py", spec.pad[1])):
            fields.append(f"{key}={val}")
        if spec.post_ops:
            fields.append("post=" + ",".join(op.encode() for op in spec.post_ops))
        fields.append(f"block={spec.block}")
        if spec.ib_tag is not None:
            fields.append(f"ib={spec.ib_tag[0]}:{spec.ib_tag[1]}")
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def parse_network_config(text: str, source: str = "<network>") -> NetworkGraph:
    """Parse the text format back into a graph.

    The parser is strict: unknown keys, missing fields and malformed values
    raise ValueError with the line number, so broken configs cannot half
    load.
    """

    name = None
    inputs: List[TensorDef] = []
    layers: List[LayerSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "network":
                (name,) = rest
            elif head == "input":
                inputs.append(_parse_input(rest))
            elif head == "layer":
                layers.append(_parse_layer(rest))
            else:
                raise ValueError(f"unknown directive '{head}'")
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    if name is None:
        raise ValueError(f"{source}: missing 'network <name>' line")
    return NetworkGraph(name, inputs, layers)


def _parse_input(rest: Sequence[str]) -> TensorDef:
    if not rest:
        raise ValueError("input needs a name")
    vals = _kv(rest[1:], allowed={"x", "y", "c"})
    missing = {"x", "y", "c"} - set(vals)
    if missing:
        raise ValueError(f"input missing {sorted(missing)}")
    return TensorDef(rest[0], int(vals["x"]), int(vals["y"]), int(vals["c"]))


def _parse_layer(rest: Sequence[str]) -> LayerSpec:
    if not rest:
        raise ValueError("layer needs a name")
    lname = rest[0]
    allowed = set(_LAYER_INT_KEYS) | {"kind", "in", "win", "post", "block", "ib"}
    vals = _kv(rest[1:], allowed=allowed)
    if "kind" not in vals or "in" not in vals:
        raise ValueError(f"layer '{lname}' missing kind= or in=")
    dims_kwargs = {}
    for key in ("b", "k", "c", "ox", "oy", "fx", "fy"):
        if key in vals:
            dims_kwargs[key] = int(vals[key])
    post_ops = []
    if "post" in vals and vals["post"]:
        post_ops = [PostOp.decode(p) for p in vals["post"].split(",")]
    ib_tag = None
    if "ib" in vals:
        pair_id, _, role = vals["ib"].rpartition(":")
        if role not in ("expand", "project") or not pair_id:
            raise ValueError(f"layer '{lname}': bad ib tag '{vals['ib']}'")
        ib_tag = (pair_id, role)
    spec = LayerSpec(
        name=lname, kind=vals["kind"], dims=LayerDims(**dims_kwargs),
        inputs=vals["in"].split(","), weight_input=vals.get("win"),
        stride=(int(vals.get("sx", 1)), int(vals.get("sy", 1))),
        pad=(int(vals.get("px", 0)), int(vals.get("py", 0))),
        post_ops=post_ops, block=vals.get("block", "cnn"), ib_tag=ib_tag)
    spec.validate()
    return spec


def _kv(tokens: Sequence[str], allowed) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            raise ValueError(f"expected key=value, got '{tok}'")
        key, _, value = tok.partition("=")
        if key not in allowed:
            raise ValueError(f"unknown key '{key}'")
        if key in out:
            raise ValueError(f"duplicate key '{key}'")
        out[key] = value
    return out
