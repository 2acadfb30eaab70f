"""Instruction set of the accelerator controller.

Programs are streams of 32-bit words.  Every instruction starts with a head
word whose top nibble selects the operation; the remaining fields and any
payload words are laid out as documented below.  A textual assembly form
maps one line to one instruction and round-trips losslessly through the
encoder: ``disassemble(assemble(text)) == normalize(text)``.

Binary layout (bit ranges are inclusive, [31:28] is the opcode nibble):

  LOAD    0x1   head [27:25]=dst level  [24:22]=src level  [21]=tee flag
                     [15:0]=tile index
                payload: dst_addr, src_addr, row_bytes, n1, pitch1,
                         n2, pitch2, tee_addr (if flag)
  STORE   0x2   head [27:25]=dst level  [24:21]=postproc slot  [15:0]=tile
                payload: orf_base, dst_addr, vec_len, n1, pitch1,
                         n2, pitch2
  COMPUTE 0x3   head [27:25]=kind  [24:23]=dataflow  [22]=init
                     [21]=per-batch weights  [15:0]=tile
                payload: b, k, c, ox, oy, fx, fy, sx, sy, wx, wy,
                         kstride, imem_base, wreg_base, aux_base, orf_base
  POSTCFG 0x4   head [27]=0  [26:23]=slot  [22:20]=op count  [15:0]=vec_len
                payload per op: (code<<28 | n_params), then the params
  POSTPASS 0x4  head [27]=1  [26:23]=slot  [22:20]=src level
                     [19:17]=dst level  [15:0]=tile
                payload: src_addr, dst_addr, n_vec
  SYNC    0x5   head only
  HALT    0x6   head only

Reserved bits must be zero; the decoder rejects anything else so that
encode and decode are exact inverses.

Assembly grammar (one instruction per line, '#' starts a comment):

  load     dst=LEVEL:ADDR src=LEVEL:ADDR bytes=ROW [n1= p1= n2= p2=]
           [tee=ADDR] [tile=T]
  store    dst=LEVEL:ADDR orf=BASE vec=LEN n1=N [p1= n2= p2=]
           [slot=S] [tile=T]
  compute  kind=K df=D b= k= c= ox= oy= fx= fy= [sx= sy=] [wx= wy=]
           [kstride=] imem= wreg= [aux=] orf= [init=] [pbw=] [tile=]
  postcfg  slot=S vec=LEN ops=OP[,OP...]     OP := kind:param:param...
  postpass slot=S src=LEVEL:ADDR dst=LEVEL:ADDR vecs=N [tile=T]
  sync
  halt

Transfers use a two-level DMA descriptor: n2 blocks of n1 rows of
``row_bytes`` each, the source (load) or target (store) address stepping
``pitch1`` bytes per row and ``pitch2`` per block.  The far side is always
dense.  This is how rectangular tile windows, weight slices and scattered
pixel-row drains address row-major tensors with one instruction.

Levels: dram, sram, imem, wreg.  Kinds: conv, dw, pw, gemm, add.
Dataflows: oxc, ck, cfx.  Post ops: act (no params), rq:mult:shift,
ln:out_mult:out_shift:gamma_addr:beta_addr, sm:in_mult:in_shift:out_mult:
out_shift.  Integers are decimal or 0x-prefixed hex.  Field order is free;
unknown or duplicate fields are errors.

Addresses are byte offsets within their level except ``orf`` values,
which index 32-bit accumulator entries.  COMPUTE extents are the tile's
loop bounds; a bound of zero is a range error.  ``kstride`` is the output
register file row pitch in entries (defaults to the tile's k extent) so a
k-slice can accumulate into a parked full-width row.
"""

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

__all__ = [
    "OP_LOAD", "OP_STORE", "OP_COMPUTE", "OP_POSTPROC", "OP_SYNC", "OP_HALT",
    "LVL_DRAM", "LVL_SRAM", "LVL_IMEM", "LVL_WREG",
    "Load", "Store", "Compute", "PostCfg", "PostPass", "Sync", "Halt",
    "Instruction", "AsmError", "DecodeError",
    "encode_program", "decode_program", "program_to_bytes",
    "program_from_bytes", "assemble", "disassemble", "normalize",
]

OP_LOAD = 0x1
OP_STORE = 0x2
OP_COMPUTE = 0x3
OP_POSTPROC = 0x4
OP_SYNC = 0x5
OP_HALT = 0x6

LVL_DRAM = 0
LVL_SRAM = 1
LVL_IMEM = 2
LVL_WREG = 3

_LEVEL_NAMES = {LVL_DRAM: "dram", LVL_SRAM: "sram",
                LVL_IMEM: "imem", LVL_WREG: "wreg"}
_LEVEL_CODES = {v: k for k, v in _LEVEL_NAMES.items()}

# numeric codes <-> the layer-kind strings used across the package
_KIND_NAMES = {1: "conv", 2: "dw", 3: "pw", 4: "gemm", 5: "add"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}
KIND_BY_CODE = {1: "conv2d", 2: "dwconv2d", 3: "pwconv", 4: "gemm", 5: "add"}
CODE_BY_KIND = {v: k for k, v in KIND_BY_CODE.items()}

_DF_NAMES = {0: "oxc", 1: "ck", 2: "cfx"}
_DF_CODES = {v: k for k, v in _DF_NAMES.items()}
DATAFLOW_BY_CODE = {0: "OX|C", 1: "C|K", 2: "C|FX"}
CODE_BY_DATAFLOW = {v: k for k, v in DATAFLOW_BY_CODE.items()}

_POST_NAMES = {1: "act", 2: "rq", 3: "ln", 4: "sm"}
_POST_CODES = {v: k for k, v in _POST_NAMES.items()}
_POST_NPARAMS = {"act": 0, "rq": 2, "ln": 4, "sm": 4}

_U32 = 1 << 32
_U16 = 1 << 16


class AsmError(ValueError):
    """Assembly text rejected; message carries the line number."""


class DecodeError(ValueError):
    """Binary stream rejected; message carries the word index."""


def _chk(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _chk_u32(val: int, name: str) -> None:
    _chk(0 <= val < _U32, f"{name} out of range: {val}")


def _chk_tile(val: int) -> None:
    _chk(0 <= val < _U16, f"tile index out of range: {val}")


@dataclass(frozen=True)
class Load:
    """Move bytes toward the array: dram/sram into sram, imem or wreg.

    Gathers ``n2 * n1`` rows of ``row_bytes`` from the source (two-level
    strided addressing) into a dense destination block.  ``tee_addr``
    streams a staging copy into SRAM while the primary transfer fills a
    local memory, so a later pass can re-read the data without touching
    DRAM again.
    """

    dst_level: int
    dst_addr: int
    src_level: int
    src_addr: int
    row_bytes: int
    n1: int = 1
    pitch1: int = 0
    n2: int = 1
    pitch2: int = 0
    tile: int = 0
    tee_addr: Optional[int] = None

    def __post_init__(self):
        _chk(self.dst_level in (LVL_SRAM, LVL_IMEM, LVL_WREG),
             f"load dst must be sram/imem/wreg, got {self.dst_level}")
        _chk(self.src_level in (LVL_DRAM, LVL_SRAM),
             f"load src must be dram/sram, got {self.src_level}")
        _chk(self.src_level != self.dst_level, "load src == dst level")
        _chk(self.row_bytes >= 1, f"load rows of {self.row_bytes} bytes")
        _chk(self.n1 >= 1 and self.n2 >= 1,
             f"load row counts {self.n1}x{self.n2}")
        for name in ("dst_addr", "src_addr", "row_bytes", "n1", "pitch1",
                     "n2", "pitch2"):
            _chk_u32(getattr(self, name), name)
        _chk_tile(self.tile)
        if self.tee_addr is not None:
            _chk(self.src_level == LVL_DRAM and self.dst_level != LVL_SRAM,
                 "tee copy only applies to dram -> local transfers")
            _chk_u32(self.tee_addr, "tee_addr")

    @property
    def nbytes(self) -> int:
        return self.row_bytes * self.n1 * self.n2


@dataclass(frozen=True)
class Store:
    """Drain output rows through the write-back unit.

    Reads ``n2 * n1`` rows of ``vec_len`` accumulators starting at
    ``orf_base`` (row pitch = vec_len), applies the post-processing chain
    configured in ``slot`` (slot 0 passes raw 32-bit values through) and
    scatters the resulting rows: row (i2, i1) lands at
    ``dst_addr + i2*pitch2 + i1*pitch1``.  ``pitch1`` 0 packs rows densely.
    """

    dst_level: int
    dst_addr: int
    orf_base: int
    vec_len: int
    n1: int
    pitch1: int = 0
    n2: int = 1
    pitch2: int = 0
    slot: int = 0
    tile: int = 0

    def __post_init__(self):
        _chk(self.dst_level in (LVL_SRAM, LVL_DRAM, LVL_IMEM),
             f"store dst must be sram/dram/imem, got {self.dst_level}")
        _chk(self.n1 >= 1 and self.n2 >= 1,
             f"store row counts {self.n1}x{self.n2}")
        _chk(self.vec_len >= 1, f"store row of {self.vec_len} entries")
        _chk(0 <= self.slot < 16, f"slot out of range: {self.slot}")
        _chk(self.n2 == 1 or self.pitch2 > 0,
             "scattered blocks need a block pitch")
        for name in ("dst_addr", "orf_base", "vec_len", "n1", "pitch1",
                     "n2", "pitch2"):
            _chk_u32(getattr(self, name), name)
        _chk_tile(self.tile)

    @property
    def n_pix(self) -> int:
        return self.n1 * self.n2


@dataclass(frozen=True)
class Compute:
    """One tile of array work.

    Extents are the tile's loop bounds.  The staged input window is
    ``(b, wx, wy, c)`` int8 at ``imem_base``, channel fastest; weights
    sit at ``wreg_base`` laid out per kind (conv ``(k,c,fx,fy)``, dw
    ``(c,fx,fy)``, pw/gemm ``(k,c)``, or ``(b,k,c)`` with
    ``per_batch_w``).  ``aux_base`` is the
    second input window of an add.  Results accumulate into output
    register file rows: entry = orf_base + (b*npix + pix)*kstride + k.
    ``init`` zeroes the touched entries first; later slices of the same
    rows clear it to accumulate in place.
    """

    kind: str
    dataflow: str
    b: int
    k: int
    c: int
    ox: int
    oy: int
    fx: int = 1
    fy: int = 1
    sx: int = 1
    sy: int = 1
    wx: int = 0          # 0 in the constructor means "derive from ox/fx/sx"
    wy: int = 0
    kstride: int = 0     # 0 means vec rows are exactly k wide
    imem_base: int = 0
    wreg_base: int = 0
    aux_base: int = 0
    orf_base: int = 0
    init: bool = True
    per_batch_w: bool = False
    tile: int = 0

    def __post_init__(self):
        _chk(self.kind in CODE_BY_KIND, f"unknown kind {self.kind!r}")
        _chk(self.dataflow in CODE_BY_DATAFLOW,
             f"unknown dataflow {self.dataflow!r}")
        for name in ("b", "k", "c", "ox", "oy", "fx", "fy", "sx", "sy"):
            val = getattr(self, name)
            _chk(val >= 1, f"compute loop bound {name}={val}")
            _chk_u32(val, name)
        if self.wx == 0:
            object.__setattr__(self, "wx", (self.ox - 1) * self.sx + self.fx)
        if self.wy == 0:
            object.__setattr__(self, "wy", (self.oy - 1) * self.sy + self.fy)
        if self.kstride == 0:
            object.__setattr__(self, "kstride", self.k)
        _chk(self.wx >= (self.ox - 1) * self.sx + self.fx,
             f"window wx={self.wx} cannot hold the strided patch")
        _chk(self.wy >= (self.oy - 1) * self.sy + self.fy,
             f"window wy={self.wy} cannot hold the strided patch")
        _chk(self.kstride >= self.k,
             f"kstride {self.kstride} narrower than k={self.k}")
        for name in ("wx", "wy", "kstride", "imem_base", "wreg_base",
                     "aux_base", "orf_base"):
            _chk_u32(getattr(self, name), name)
        _chk_tile(self.tile)
        if self.per_batch_w:
            _chk(self.kind == "gemm", "per-batch weights are a gemm feature")


@dataclass(frozen=True)
class PostCfg:
    """Load the post-processing engine state for one chain slot.

    ``ops`` is a tuple of (kind, params) pairs; params are the integers
    listed in the grammar (ln carries its gamma/beta table addresses as
    params three and four).  ``vec_len`` is the channel vector width the
    chain operates on.
    """

    slot: int
    vec_len: int
    ops: Tuple[Tuple[str, Tuple[int, ...]], ...]

    def __post_init__(self):
        _chk(1 <= self.slot < 16, f"cfg slot out of range: {self.slot}")
        _chk(1 <= self.vec_len < _U16, f"vec_len out of range: {self.vec_len}")
        _chk(1 <= len(self.ops) <= 7, f"{len(self.ops)} ops in one chain")
        ops = tuple((kind, tuple(int(p) for p in params))
                    for kind, params in self.ops)
        object.__setattr__(self, "ops", ops)
        for kind, params in ops:
            _chk(kind in _POST_NPARAMS, f"unknown post op {kind!r}")
            want = _POST_NPARAMS[kind]
            _chk(len(params) == want,
                 f"post op {kind} expects {want} params, got {len(params)}")
            for p in params:
                _chk_u32(p, f"{kind} param")


@dataclass(frozen=True)
class PostPass:
    """Deferred vector pass: stream raw 32-bit rows from memory through
    the post-processing engine and write the results back out."""

    slot: int
    src_level: int
    src_addr: int
    dst_level: int
    dst_addr: int
    n_vec: int
    tile: int = 0

    def __post_init__(self):
        _chk(1 <= self.slot < 16, f"pass slot out of range: {self.slot}")
        _chk(self.src_level in (LVL_DRAM, LVL_SRAM),
             f"pass src must be dram/sram, got {self.src_level}")
        _chk(self.dst_level in (LVL_DRAM, LVL_SRAM),
             f"pass dst must be dram/sram, got {self.dst_level}")
        _chk(self.n_vec >= 1, f"pass over {self.n_vec} vectors")
        _chk_u32(self.src_addr, "src_addr")
        _chk_u32(self.dst_addr, "dst_addr")
        _chk_u32(self.n_vec, "n_vec")
        _chk_tile(self.tile)


@dataclass(frozen=True)
class Sync:
    """Barrier: wait for every unit (bus, fill, array, drain) to go idle."""


@dataclass(frozen=True)
class Halt:
    """Program terminator."""


Instruction = object  # union marker for docs; isinstance checks use classes


# ---------------------------------------------------------------------------
# binary encoding

def _encode_one(ins) -> List[int]:
    if isinstance(ins, Load):
        head = (OP_LOAD << 28 | ins.dst_level << 25 | ins.src_level << 22
                | (1 << 21 if ins.tee_addr is not None else 0) | ins.tile)
        words = [head, ins.dst_addr, ins.src_addr, ins.row_bytes,
                 ins.n1, ins.pitch1, ins.n2, ins.pitch2]
        if ins.tee_addr is not None:
            words.append(ins.tee_addr)
        return words
    if isinstance(ins, Store):
        head = OP_STORE << 28 | ins.dst_level << 25 | ins.slot << 21 | ins.tile
        return [head, ins.orf_base, ins.dst_addr, ins.vec_len,
                ins.n1, ins.pitch1, ins.n2, ins.pitch2]
    if isinstance(ins, Compute):
        head = (OP_COMPUTE << 28 | CODE_BY_KIND[ins.kind] << 25
                | CODE_BY_DATAFLOW[ins.dataflow] << 23
                | (1 << 22 if ins.init else 0)
                | (1 << 21 if ins.per_batch_w else 0) | ins.tile)
        return [head, ins.b, ins.k, ins.c, ins.ox, ins.oy, ins.fx, ins.fy,
                ins.sx, ins.sy, ins.wx, ins.wy, ins.kstride,
                ins.imem_base, ins.wreg_base, ins.aux_base, ins.orf_base]
    if isinstance(ins, PostCfg):
        head = (OP_POSTPROC << 28 | ins.slot << 23
                | len(ins.ops) << 20 | ins.vec_len)
        words = [head]
        for kind, params in ins.ops:
            words.append(_POST_CODES[kind] << 28 | len(params))
            words.extend(params)
        return words
    if isinstance(ins, PostPass):
        head = (OP_POSTPROC << 28 | 1 << 27 | ins.slot << 23
                | ins.src_level << 20 | ins.dst_level << 17 | ins.tile)
        return [head, ins.src_addr, ins.dst_addr, ins.n_vec]
    if isinstance(ins, Sync):
        return [OP_SYNC << 28]
    if isinstance(ins, Halt):
        return [OP_HALT << 28]
    raise ValueError(f"not an instruction: {ins!r}")


def encode_program(instrs) -> List[int]:
    """Flatten instructions into a list of 32-bit words."""
    words: List[int] = []
    for ins in instrs:
        words.extend(_encode_one(ins))
    return words


def program_to_bytes(instrs) -> bytes:
    """Little-endian byte image of the encoded program."""
    out = bytearray()
    for w in encode_program(instrs):
        out += w.to_bytes(4, "little")
    return bytes(out)


def program_from_bytes(blob: bytes) -> List[Instruction]:
    if len(blob) % 4:
        raise DecodeError(f"program image of {len(blob)} bytes is not "
                          "word aligned")
    words = [int.from_bytes(blob[i:i + 4], "little")
             for i in range(0, len(blob), 4)]
    return decode_program(words)


class _WordReader:
    def __init__(self, words):
        self.words = list(words)
        self.pos = 0

    def take(self, n: int) -> List[int]:
        if self.pos + n > len(self.words):
            raise DecodeError(f"word {self.pos}: truncated instruction")
        out = self.words[self.pos:self.pos + n]
        self.pos += n
        return out


def _require_zero(head: int, mask: int, at: int) -> None:
    if head & mask:
        raise DecodeError(f"word {at}: reserved bits set in "
                          f"{head:#010x}")


def decode_program(words) -> List[Instruction]:
    """Inverse of :func:`encode_program`; rejects malformed streams."""
    rd = _WordReader(words)
    out: List[Instruction] = []
    while rd.pos < len(rd.words):
        at = rd.pos
        head = rd.take(1)[0]
        if not 0 <= head < _U32:
            raise DecodeError(f"word {at}: not a 32-bit value: {head}")
        op = head >> 28
        tile = head & 0xFFFF
        try:
            if op == OP_LOAD:
                _require_zero(head, 0x001F0000, at)
                dst = (head >> 25) & 0x7
                src = (head >> 22) & 0x7
                tee = bool(head & (1 << 21))
                (dst_addr, src_addr, row_bytes,
                 n1, p1, n2, p2) = rd.take(7)
                tee_addr = rd.take(1)[0] if tee else None
                out.append(Load(dst, dst_addr, src, src_addr, row_bytes,
                                n1, p1, n2, p2, tile=tile,
                                tee_addr=tee_addr))
            elif op == OP_STORE:
                _require_zero(head, 0x001F0000, at)
                dst = (head >> 25) & 0x7
                slot = (head >> 21) & 0xF
                orf, addr, vec, n1, p1, n2, p2 = rd.take(7)
                out.append(Store(dst, addr, orf, vec, n1, p1, n2, p2,
                                 slot=slot, tile=tile))
            elif op == OP_COMPUTE:
                _require_zero(head, 0x001F0000, at)
                kind = (head >> 25) & 0x7
                df = (head >> 23) & 0x3
                if kind not in KIND_BY_CODE:
                    raise DecodeError(f"word {at}: bad kind code {kind}")
                if df not in DATAFLOW_BY_CODE:
                    raise DecodeError(f"word {at}: bad dataflow code {df}")
                (b, k, c, ox, oy, fx, fy, sx, sy, wx, wy, kstride,
                 imem, wreg, aux, orf) = rd.take(16)
                out.append(Compute(
                    KIND_BY_CODE[kind], DATAFLOW_BY_CODE[df], b, k, c, ox,
                    oy, fx, fy, sx, sy, wx, wy, kstride, imem, wreg, aux,
                    orf, init=bool(head & (1 << 22)),
                    per_batch_w=bool(head & (1 << 21)), tile=tile))
            elif op == OP_POSTPROC and not head & (1 << 27):
                slot = (head >> 23) & 0xF
                n_ops = (head >> 20) & 0x7
                _require_zero(head, 0x000F0000, at)
                ops = []
                for _ in range(n_ops):
                    op_head = rd.take(1)[0]
                    code = op_head >> 28
                    n_par = op_head & 0xFF
                    _require_zero(op_head, 0x0FFFFF00, rd.pos - 1)
                    if code not in _POST_NAMES:
                        raise DecodeError(
                            f"word {rd.pos - 1}: bad post op code {code}")
                    ops.append((_POST_NAMES[code], tuple(rd.take(n_par))))
                out.append(PostCfg(slot, head & 0xFFFF, tuple(ops)))
            elif op == OP_POSTPROC:
                slot = (head >> 23) & 0xF
                src = (head >> 20) & 0x7
                dst = (head >> 17) & 0x7
                _require_zero(head, 0x00010000, at)
                src_addr, dst_addr, n_vec = rd.take(3)
                out.append(PostPass(slot, src, src_addr, dst, dst_addr,
                                    n_vec, tile=tile))
            elif op == OP_SYNC:
                _require_zero(head, 0x0FFFFFFF, at)
                out.append(Sync())
            elif op == OP_HALT:
                _require_zero(head, 0x0FFFFFFF, at)
                out.append(Halt())
            else:
                raise DecodeError(f"word {at}: unknown opcode {op:#x}")
        except ValueError as exc:
            if isinstance(exc, DecodeError):
                raise
            raise DecodeError(f"word {at}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# assembly text

def _parse_int(tok: str, line_no: int) -> int:
    try:
        val = int(tok, 0)
    except ValueError:
        raise AsmError(f"line {line_no}: not an integer: {tok!r}") from None
    if val < 0:
        raise AsmError(f"line {line_no}: negative value {tok!r}")
    return val


def _parse_level_addr(tok: str, line_no: int) -> Tuple[int, int]:
    level, sep, addr = tok.partition(":")
    if not sep or level.lower() not in _LEVEL_CODES:
        raise AsmError(f"line {line_no}: expected level:addr, got {tok!r}")
    return _LEVEL_CODES[level.lower()], _parse_int(addr, line_no)


def _parse_fields(parts: List[str], line_no: int) -> dict:
    fields = {}
    for part in parts:
        key, sep, val = part.partition("=")
        if not sep:
            raise AsmError(f"line {line_no}: expected key=value, got {part!r}")
        key = key.lower()
        if key in fields:
            raise AsmError(f"line {line_no}: duplicate field {key!r}")
        fields[key] = val
    return fields


def _pop(fields: dict, key: str, line_no: int, default=None):
    if key in fields:
        return fields.pop(key)
    if default is not None:
        return default
    raise AsmError(f"line {line_no}: missing field {key!r}")


def _parse_ops(tok: str, line_no: int):
    ops = []
    for chunk in tok.split(","):
        bits = chunk.split(":")
        kind = bits[0].lower()
        if kind not in _POST_NPARAMS:
            raise AsmError(f"line {line_no}: unknown post op {bits[0]!r}")
        params = tuple(_parse_int(p, line_no) for p in bits[1:])
        ops.append((kind, params))
    return tuple(ops)


def _asm_line(line: str, line_no: int) -> Optional[Instruction]:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    parts = text.split()
    mn = parts[0].lower()
    fields = _parse_fields(parts[1:], line_no)

    def done(ins):
        if fields:
            extra = ", ".join(sorted(fields))
            raise AsmError(f"line {line_no}: unknown field(s) {extra}")
        return ins

    try:
        if mn == "load":
            dst_l, dst_a = _parse_level_addr(_pop(fields, "dst", line_no),
                                             line_no)
            src_l, src_a = _parse_level_addr(_pop(fields, "src", line_no),
                                             line_no)
            geti = lambda key, dfl=None: _parse_int(
                _pop(fields, key, line_no, dfl), line_no)
            row = geti("bytes")
            n1, p1 = geti("n1", "1"), geti("p1", "0")
            n2, p2 = geti("n2", "1"), geti("p2", "0")
            tile = geti("tile", "0")
            tee = fields.pop("tee", None)
            tee_addr = _parse_int(tee, line_no) if tee is not None else None
            return done(Load(dst_l, dst_a, src_l, src_a, row, n1, p1, n2, p2,
                             tile=tile, tee_addr=tee_addr))
        if mn == "store":
            dst_l, dst_a = _parse_level_addr(_pop(fields, "dst", line_no),
                                             line_no)
            geti = lambda key, dfl=None: _parse_int(
                _pop(fields, key, line_no, dfl), line_no)
            orf = geti("orf")
            vec = geti("vec")
            n1, p1 = geti("n1"), geti("p1", "0")
            n2, p2 = geti("n2", "1"), geti("p2", "0")
            return done(Store(dst_l, dst_a, orf, vec, n1, p1, n2, p2,
                              slot=geti("slot", "0"), tile=geti("tile", "0")))
        if mn == "compute":
            kind = _pop(fields, "kind", line_no).lower()
            if kind not in _KIND_CODES:
                raise AsmError(f"line {line_no}: unknown kind {kind!r}")
            df = _pop(fields, "df", line_no).lower()
            if df not in _DF_CODES:
                raise AsmError(f"line {line_no}: unknown dataflow {df!r}")
            geti = lambda key, dfl=None: _parse_int(
                _pop(fields, key, line_no, dfl), line_no)
            return done(Compute(
                KIND_BY_CODE[_KIND_CODES[kind]],
                DATAFLOW_BY_CODE[_DF_CODES[df]],
                geti("b"), geti("k"), geti("c"), geti("ox"), geti("oy"),
                geti("fx", "1"), geti("fy", "1"),
                geti("sx", "1"), geti("sy", "1"),
                geti("wx", "0"), geti("wy", "0"), geti("kstride", "0"),
                geti("imem"), geti("wreg"), geti("aux", "0"), geti("orf"),
                init=bool(geti("init", "1")),
                per_batch_w=bool(geti("pbw", "0")),
                tile=geti("tile", "0")))
        if mn == "postcfg":
            slot = _parse_int(_pop(fields, "slot", line_no), line_no)
            vec = _parse_int(_pop(fields, "vec", line_no), line_no)
            ops = _parse_ops(_pop(fields, "ops", line_no), line_no)
            return done(PostCfg(slot, vec, ops))
        if mn == "postpass":
            slot = _parse_int(_pop(fields, "slot", line_no), line_no)
            src_l, src_a = _parse_level_addr(_pop(fields, "src", line_no),
                                             line_no)
            dst_l, dst_a = _parse_level_addr(_pop(fields, "dst", line_no),
                                             line_no)
            vecs = _parse_int(_pop(fields, "vecs", line_no), line_no)
            tile = _parse_int(_pop(fields, "tile", line_no, "0"), line_no)
            return done(PostPass(slot, src_l, src_a, dst_l, dst_a, vecs,
                                 tile=tile))
        if mn == "sync":
            return done(Sync())
        if mn == "halt":
            return done(Halt())
    except ValueError as exc:
        if isinstance(exc, AsmError):
            raise
        raise AsmError(f"line {line_no}: {exc}") from exc
    raise AsmError(f"line {line_no}: unknown instruction {mn!r}")


def assemble(text: str) -> List[Instruction]:
    """Parse assembly text into an instruction list."""
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        ins = _asm_line(line, line_no)
        if ins is not None:
            out.append(ins)
    return out


def _fmt_level(level: int, addr: int) -> str:
    return f"{_LEVEL_NAMES[level]}:{addr}"


def _dis_one(ins) -> str:
    if isinstance(ins, Load):
        s = (f"load dst={_fmt_level(ins.dst_level, ins.dst_addr)} "
             f"src={_fmt_level(ins.src_level, ins.src_addr)} "
             f"bytes={ins.row_bytes} n1={ins.n1} p1={ins.pitch1} "
             f"n2={ins.n2} p2={ins.pitch2}")
        if ins.tee_addr is not None:
            s += f" tee={ins.tee_addr}"
        return s + f" tile={ins.tile}"
    if isinstance(ins, Store):
        return (f"store dst={_fmt_level(ins.dst_level, ins.dst_addr)} "
                f"orf={ins.orf_base} vec={ins.vec_len} n1={ins.n1} "
                f"p1={ins.pitch1} n2={ins.n2} p2={ins.pitch2} "
                f"slot={ins.slot} tile={ins.tile}")
    if isinstance(ins, Compute):
        return (f"compute kind={_KIND_NAMES[CODE_BY_KIND[ins.kind]]} "
                f"df={_DF_NAMES[CODE_BY_DATAFLOW[ins.dataflow]]} "
                f"b={ins.b} k={ins.k} c={ins.c} ox={ins.ox} oy={ins.oy} "
                f"fx={ins.fx} fy={ins.fy} sx={ins.sx} sy={ins.sy} "
                f"wx={ins.wx} wy={ins.wy} kstride={ins.kstride} "
                f"imem={ins.imem_base} wreg={ins.wreg_base} "
                f"aux={ins.aux_base} orf={ins.orf_base} "
                f"init={int(ins.init)} pbw={int(ins.per_batch_w)} "
                f"tile={ins.tile}")
    if isinstance(ins, PostCfg):
        ops = ",".join(
            ":".join([kind] + [str(p) for p in params])
            for kind, params in ins.ops)
        return f"postcfg slot={ins.slot} vec={ins.vec_len} ops={ops}"
    if isinstance(ins, PostPass):
        return (f"postpass slot={ins.slot} "
                f"src={_fmt_level(ins.src_level, ins.src_addr)} "
                f"dst={_fmt_level(ins.dst_level, ins.dst_addr)} "
                f"vecs={ins.n_vec} tile={ins.tile}")
    if isinstance(ins, Sync):
        return "sync"
    if isinstance(ins, Halt):
        return "halt"
    raise ValueError(f"not an instruction: {ins!r}")


def disassemble(instrs) -> str:
    """Canonical text for an instruction list (one line each)."""
    return "\n".join(_dis_one(i) for i in instrs)


def normalize(text: str) -> str:
    """Canonical form of assembly text: parsed and re-printed."""
    return disassemble(assemble(text))
