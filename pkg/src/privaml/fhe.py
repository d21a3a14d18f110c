"""Functional simulation of a torus-style encrypted-integer backend.

The backend exposes exactly five primitives: keygen, encrypt, decrypt,
bit-width-bounded addition, and programmable table lookup. Everything else
(comparisons, tree evaluation) is built from those, so a real scheme with
the same surface could be substituted without touching callers.

This is a simulation: ciphertext payloads are plain integers and provide no
confidentiality. What the simulation does enforce is the structure of the
computation (key identity checks, width growth and limits, the secret-handle
boundary) and an exactness guarantee: decrypting an evaluated circuit gives
the same integer the clear quantized evaluation produces.

Width rules: add grows the result to max(width_a, width_b) + 1 (an unsigned
operand mixed with a signed one is first widened by one bit), bounded by
max_accumulator_bits. apply_lut accepts inputs up to max_lut_bits and resets
the output width to the table's declared width regardless of input growth.
Simulated cost: each lookup costs weight * 2^input_bits (table size), adds
and encryptions cost weight * bit_width.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

from .errors import PipelineError
from .gbt import tree_leaf_paths
from .quant import QuantizedEnsemble

DEFAULT_MAX_LUT_BITS = 16
DEFAULT_MAX_ACCUMULATOR_BITS = 24


class KeyMismatch(PipelineError):
    """Operation mixes ciphertexts or handles from different keys."""


class PrecisionOverflow(PipelineError):
    """A plaintext does not fit the declared bit width."""


class AccumulatorOverflow(PipelineError):
    """An addition would exceed the accumulator width limit."""


class LutWidthExceeded(PipelineError):
    """A lookup input is wider than the backend supports."""


@dataclass(frozen=True)
class PublicHandle:
    key_id: bytes


@dataclass(frozen=True)
class SecretHandle:
    key_id: bytes

    def __repr__(self) -> str:  # keep secrets out of logs
        return "SecretHandle(<redacted>)"


@dataclass(frozen=True)
class KeyPair:
    key_id: bytes
    public: PublicHandle
    secret: SecretHandle


def keygen(seed: int) -> KeyPair:
    """Deterministic per seed; 128-bit key identity."""
    rng = random.Random(seed)
    key_id = rng.getrandbits(128).to_bytes(16, "big")
    return KeyPair(key_id=key_id, public=PublicHandle(key_id), secret=SecretHandle(key_id))


def _fits(value: int, bit_width: int, signed: bool) -> bool:
    if signed:
        half = 1 << (bit_width - 1)
        return -half <= value < half
    return 0 <= value < (1 << bit_width)


@dataclass(frozen=True)
class Ciphertext:
    key_id: bytes
    value: int  # simulation-transparent payload; protocols treat it as opaque
    bit_width: int
    signed: bool = False

    def __repr__(self) -> str:
        return f"Ciphertext(width={self.bit_width}, signed={self.signed})"


@dataclass
class EvalContext:
    """Width limits plus monotone operation counters and a synthetic cost."""

    max_lut_bits: int = DEFAULT_MAX_LUT_BITS
    max_accumulator_bits: int = DEFAULT_MAX_ACCUMULATOR_BITS
    lut_ops: int = 0
    add_ops: int = 0
    encrypt_ops: int = 0
    simulated_cost: float = 0.0
    cost_weights: dict = field(
        default_factory=lambda: {"lut": 1.0, "add": 0.001, "encrypt": 0.01}
    )
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def _count(self, kind: str, units: float) -> None:
        with self._lock:
            if kind == "lut":
                self.lut_ops += 1
            elif kind == "add":
                self.add_ops += 1
            elif kind == "encrypt":
                self.encrypt_ops += 1
            self.simulated_cost += self.cost_weights.get(kind, 0.0) * units

    def counters(self) -> dict:
        with self._lock:
            return {
                "lut_ops": self.lut_ops,
                "add_ops": self.add_ops,
                "encrypt_ops": self.encrypt_ops,
                "simulated_cost": self.simulated_cost,
            }


def encrypt(
    pk: PublicHandle,
    m: int,
    bit_width: int,
    signed: bool = False,
    ctx: Optional[EvalContext] = None,
) -> Ciphertext:
    if bit_width < 1:
        raise PrecisionOverflow("bit_width must be >= 1")
    if not _fits(m, bit_width, signed):
        raise PrecisionOverflow(f"{m} does not fit {'signed ' if signed else ''}{bit_width} bits")
    if ctx is not None:
        ctx._count("encrypt", bit_width)
    return Ciphertext(key_id=pk.key_id, value=m, bit_width=bit_width, signed=signed)


def decrypt(sk: SecretHandle, ct: Ciphertext) -> int:
    if not isinstance(sk, SecretHandle):
        raise KeyMismatch("decryption requires a secret handle")
    if sk.key_id != ct.key_id:
        raise KeyMismatch("ciphertext was produced under a different key")
    return ct.value


def _const_width(c: int, signed: bool) -> int:
    if not signed:
        return max(1, c.bit_length())
    return (c.bit_length() if c >= 0 else (-c - 1).bit_length()) + 1


def add(
    a: Ciphertext,
    b: Union[Ciphertext, int],
    ctx: Optional[EvalContext] = None,
) -> Ciphertext:
    """Homomorphic addition of two ciphertexts or ciphertext + constant."""
    limit = ctx.max_accumulator_bits if ctx is not None else DEFAULT_MAX_ACCUMULATOR_BITS
    if isinstance(b, Ciphertext):
        if a.key_id != b.key_id:
            raise KeyMismatch("cannot add ciphertexts under different keys")
        signed = a.signed or b.signed
        wa = a.bit_width + (1 if signed and not a.signed else 0)
        wb = b.bit_width + (1 if signed and not b.signed else 0)
        value = a.value + b.value
        key_id = a.key_id
    else:
        signed = a.signed or b < 0
        wa = a.bit_width + (1 if signed and not a.signed else 0)
        wb = _const_width(b, signed)
        value = a.value + b
        key_id = a.key_id
    width = max(wa, wb) + 1
    if width > limit:
        raise AccumulatorOverflow(f"sum needs {width} bits, accumulator allows {limit}")
    if ctx is not None:
        ctx._count("add", width)
    return Ciphertext(key_id=key_id, value=value, bit_width=width, signed=signed)


@dataclass(frozen=True)
class Lut:
    """Univariate lookup table. Either explicit entries (size 2^input bits,
    indexed by offset-binary for signed inputs) or a plaintext function of
    the signed value."""

    out_bits: int
    out_signed: bool = False
    entries: Optional[tuple[int, ...]] = None
    fn: Optional[Callable[[int], int]] = None

    @staticmethod
    def from_entries(entries: Sequence[int], out_bits: int, out_signed: bool = False) -> "Lut":
        return Lut(out_bits=out_bits, out_signed=out_signed, entries=tuple(entries))

    @staticmethod
    def from_fn(fn: Callable[[int], int], out_bits: int, out_signed: bool = False) -> "Lut":
        return Lut(out_bits=out_bits, out_signed=out_signed, fn=fn)


def apply_lut(ct: Ciphertext, lut: Lut, ctx: Optional[EvalContext] = None) -> Ciphertext:
    """Map the plaintext through the table; output width is the table's
    declared width (noise-reset semantics: independent of input growth)."""
    limit = ctx.max_lut_bits if ctx is not None else DEFAULT_MAX_LUT_BITS
    if ct.bit_width > limit:
        raise LutWidthExceeded(f"lookup input is {ct.bit_width} bits, limit {limit}")
    if lut.entries is not None:
        if len(lut.entries) != (1 << ct.bit_width):
            raise ValueError(
                f"table has {len(lut.entries)} entries, input width {ct.bit_width} needs "
                f"{1 << ct.bit_width}"
            )
        index = ct.value + (1 << (ct.bit_width - 1)) if ct.signed else ct.value
        out = lut.entries[index]
    elif lut.fn is not None:
        out = lut.fn(ct.value)
    else:
        raise ValueError("lookup table defines neither entries nor a function")
    if not _fits(out, lut.out_bits, lut.out_signed):
        raise PrecisionOverflow(
            f"table output {out} does not fit {'signed ' if lut.out_signed else ''}"
            f"{lut.out_bits} bits"
        )
    if ctx is not None:
        ctx._count("lut", float(1 << ct.bit_width))
    return Ciphertext(key_id=ct.key_id, value=out, bit_width=lut.out_bits, signed=lut.out_signed)


def comparison_lut(n_bits: int, t_q: int, le: bool) -> Lut:
    """Step table over the unsigned level domain: (v <= t_q) or (v > t_q)."""
    if le:
        entries = [1 if v <= t_q else 0 for v in range(1 << n_bits)]
    else:
        entries = [1 if v > t_q else 0 for v in range(1 << n_bits)]
    return Lut.from_entries(entries, out_bits=1, out_signed=False)


def selection_lut(path_len: int, leaf_value: int, n_bits: int) -> Lut:
    """Maps a path-bit sum to the leaf integer when all path_len comparisons
    agree, 0 otherwise. Input width equals path_len (the mechanical width of
    summing path_len one-bit values)."""
    entries = [leaf_value if s == path_len else 0 for s in range(1 << path_len)]
    return Lut.from_entries(entries, out_bits=n_bits, out_signed=True)


def identity_lut(out_bits: int, out_signed: bool = True) -> Lut:
    return Lut.from_fn(lambda v: v, out_bits=out_bits, out_signed=out_signed)


def _balanced_reduce(terms: list, combine) -> object:
    while len(terms) > 1:
        nxt = []
        for i in range(0, len(terms) - 1, 2):
            nxt.append(combine(terms[i], terms[i + 1]))
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0]


def eval_ensemble_encrypted(
    qe: QuantizedEnsemble,
    enc_row: Sequence[Ciphertext],
    ctx: Optional[EvalContext] = None,
) -> Ciphertext:
    """Evaluate the quantized ensemble on an encrypted feature row.

    Per internal node, one lookup per orientation turns the encrypted
    feature level into a routing bit; per leaf, the bits along its path are
    summed and a selection lookup emits the leaf integer iff all of them
    fired. Leaf terms are one-hot per tree, so partial sums are renormalized
    back to n_bits with identity lookups whenever their mechanical width
    reaches the lookup limit. Tree scores and the base term are then
    accumulated with plain additions.

    Decrypting the result gives exactly predict_quantized(...).score.
    """
    ctx = ctx if ctx is not None else EvalContext()
    if len(enc_row) != qe.n_features:
        raise PrecisionOverflow(
            f"expected {qe.n_features} encrypted features, got {len(enc_row)}"
        )
    key_ids = {ct.key_id for ct in enc_row}
    if len(key_ids) > 1:
        raise KeyMismatch("encrypted row mixes keys")
    for ct in enc_row:
        if ct.bit_width != qe.n_bits or ct.signed:
            raise PrecisionOverflow(
                f"encrypted features must be unsigned {qe.n_bits}-bit values"
            )
    if enc_row:
        pk = PublicHandle(enc_row[0].key_id)
    else:
        raise PrecisionOverflow("encrypted row is empty")

    def renorm(ct: Ciphertext) -> Ciphertext:
        return apply_lut(ct, identity_lut(qe.n_bits, out_signed=True), ctx)

    def add_onehot(a: Ciphertext, b: Ciphertext) -> Ciphertext:
        c = add(a, b, ctx)
        if c.bit_width >= ctx.max_lut_bits:
            c = renorm(c)
        return c

    terms: list[Ciphertext] = [encrypt(pk, qe.base_int, qe.n_bits, signed=True, ctx=ctx)]
    for tree in qe.trees:
        paths = tree_leaf_paths(tree)
        if len(paths) == 1:
            terms.append(encrypt(pk, tree.value[0], qe.n_bits, signed=True, ctx=ctx))
            continue
        bits: dict[tuple[int, bool], Ciphertext] = {}

        def node_bit(node: int, went_left: bool) -> Ciphertext:
            key = (node, went_left)
            if key not in bits:
                lut = comparison_lut(qe.n_bits, tree.threshold[node], le=went_left)
                bits[key] = apply_lut(enc_row[tree.feature[node]], lut, ctx)
            return bits[key]

        leaf_terms = []
        for leaf_id, path in paths:
            acc = node_bit(*path[0])
            for step in path[1:]:
                acc = add(acc, node_bit(*step), ctx)
            sel = selection_lut(len(path), tree.value[leaf_id], qe.n_bits)
            leaf_terms.append(apply_lut(acc, sel, ctx))
        score = _balanced_reduce(leaf_terms, add_onehot)
        if score.bit_width > qe.n_bits:
            score = renorm(score)
        terms.append(score)
    return _balanced_reduce(terms, lambda a, b: add(a, b, ctx))


def cost_report(ctx: EvalContext) -> dict:
    """Pure read of the context's counters and synthetic cost."""
    return ctx.counters()


# ---------------------------------------------------------------------------
# Wire encoding (fixed 26-byte layout, little-endian payload)

CIPHERTEXT_WIRE_BYTES = 26
_FLAG_SIGNED = 0x01


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    """{key_id:16}{flags:1}{bit_width:1}{payload:8 LE two's complement}."""
    flags = _FLAG_SIGNED if ct.signed else 0
    payload = ct.value & 0xFFFFFFFFFFFFFFFF
    return ct.key_id + bytes([flags, ct.bit_width]) + payload.to_bytes(8, "little")


def ciphertext_from_bytes(raw: bytes) -> Ciphertext:
    if len(raw) != CIPHERTEXT_WIRE_BYTES:
        raise ValueError(f"ciphertext frame must be {CIPHERTEXT_WIRE_BYTES} bytes")
    key_id = raw[:16]
    flags = raw[16]
    bit_width = raw[17]
    value = int.from_bytes(raw[18:26], "little")
    signed = bool(flags & _FLAG_SIGNED)
    if signed and value >= 1 << 63:
        value -= 1 << 64
    return Ciphertext(key_id=key_id, value=value, bit_width=bit_width, signed=signed)
