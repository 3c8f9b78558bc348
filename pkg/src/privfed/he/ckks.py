"""Minimal leveled CKKS: encode/encrypt/decrypt, ciphertext addition, and one
ciphertext-plaintext multiplication with rescale.

The aggregation circuit needs only ct+ct and a single ct*plaintext, so
ciphertexts stay degree 1 and there is no relinearization, rotation, or
bootstrapping.  Representation choices:

- RNS: each polynomial is a (levels, N) uint64 array, one row per active
  prime, kept permanently in the NTT domain; rescaling transforms only the
  row being dropped.
- The last entry of ``modulus_bits`` is reserved headroom consumed by fresh
  encryption bookkeeping; ciphertexts start on the remaining chain, so a
  [60, 40, 40] chain yields fresh level 1 and exactly one legal rescaling
  multiplication.
- ``mul_scalar_rescale`` encodes its scalar at the exact value of the prime
  the rescale consumes, so ciphertext scale is preserved bit for bit and the
  serialized header can carry scale as an integer log2.
- Secrets are centered ternary; errors are centered binomial with sigma
  close to 3.2.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import (
    CapacityError,
    ConfigError,
    DecodeError,
    DepthExhaustedError,
    LayoutError,
    StateError,
)
from .ntt import PrimeField, generate_ntt_primes

_CBD_BITS = 21  # centered binomial Sum(21) - Sum(21): variance 10.5, sigma 3.24
_HEADER = struct.Struct("<8sBHI")


@dataclass(frozen=True)
class CkksParams:
    poly_degree: int
    modulus_bits: tuple[int, ...]
    scale_log2: int

    def __post_init__(self):
        object.__setattr__(self, "modulus_bits", tuple(int(b) for b in self.modulus_bits))
        n = self.poly_degree
        if n < 8 or n & (n - 1):
            raise ConfigError("poly_degree must be a power of two >= 8")
        if len(self.modulus_bits) < 2:
            raise ConfigError("modulus chain needs at least 2 primes")
        if not 1 <= self.scale_log2 <= self.modulus_bits[1]:
            raise ConfigError("scale must fit within the second modulus size")

    @property
    def slot_count(self) -> int:
        return self.poly_degree // 2

    @property
    def scale(self) -> float:
        return float(2**self.scale_log2)

    def params_hash(self) -> bytes:
        text = repr((self.poly_degree, self.modulus_bits, self.scale_log2))
        return hashlib.sha256(text.encode()).digest()[:8]


# full-scale default configuration and the reduced set used for fast tests
DEFAULT_PARAMS = CkksParams(8192, (60, 40, 40), 40)
TEST_PARAMS = CkksParams(1024, (40, 30, 30), 30)

_by_hash: dict[bytes, "_Context"] = {}


class _Context:
    """Derived per-params state: primes, fields, embedding twiddles."""

    def __init__(self, params: CkksParams):
        self.params = params
        all_primes = generate_ntt_primes(params.modulus_bits, params.poly_degree)
        # the trailing prime is encryption headroom, never part of a ciphertext
        self.active_primes = all_primes[:-1]
        self.fields = [PrimeField(q, params.poly_degree) for q in self.active_primes]
        n = params.poly_degree
        t = np.arange(n)
        self.embed_fwd = np.exp(-1j * np.pi * t / n)  # encode: fft side
        self.embed_inv = np.exp(1j * np.pi * t / n)  # decode: ifft side
        self.hash = params.params_hash()

    @property
    def fresh_level(self) -> int:
        return len(self.active_primes) - 1


@lru_cache(maxsize=8)
def _context(params: CkksParams) -> _Context:
    ctx = _Context(params)
    _by_hash[ctx.hash] = ctx
    return ctx


def _ctx_of(obj) -> _Context:
    ctx = _by_hash.get(obj.params_hash)
    if ctx is None:
        raise StateError("unknown parameter set for this object")
    return ctx


@dataclass
class PlainPoly:
    rows: np.ndarray  # (level+1, N) uint64, NTT domain
    level: int
    scale: float
    slot_fill: int
    params_hash: bytes


@dataclass
class Ciphertext:
    c0: np.ndarray  # (level+1, N) uint64, NTT domain
    c1: np.ndarray
    level: int
    scale: float
    slot_fill: int
    params_hash: bytes


@dataclass
class KeyPair:
    secret: np.ndarray  # (levels, N) NTT rows of the ternary secret
    public_b: np.ndarray
    public_a: np.ndarray
    params_hash: bytes


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _sample_ternary(rng, n: int) -> np.ndarray:
    return rng.integers(-1, 2, n).astype(np.int64)


def _sample_cbd(rng, n: int) -> np.ndarray:
    bits = rng.integers(0, 2, (2, _CBD_BITS, n), dtype=np.int64)
    return bits[0].sum(axis=0) - bits[1].sum(axis=0)


def _signed_to_rows(ctx: _Context, coeffs: np.ndarray, level: int) -> np.ndarray:
    """Reduce one signed coefficient vector mod each active prime and NTT it."""
    rows = np.empty((level + 1, ctx.params.poly_degree), dtype=np.uint64)
    for i in range(level + 1):
        rows[i] = ctx.fields[i].ntt(ctx.fields[i].reduce_signed(coeffs))
    return rows


def keygen(params: CkksParams, rng) -> KeyPair:
    """Ternary secret and a (b = -a*s + e, a) RLWE public key; deterministic
    for a given seed, so cohort members can derive the shared key locally."""
    ctx = _context(params)
    rng = _as_rng(rng)
    n = params.poly_degree
    level = ctx.fresh_level
    secret = _signed_to_rows(ctx, _sample_ternary(rng, n), level)
    error = _signed_to_rows(ctx, _sample_cbd(rng, n), level)
    # uniform randomness is uniform in either domain; sample a directly in NTT form
    public_a = np.empty_like(secret)
    public_b = np.empty_like(secret)
    for i, field in enumerate(ctx.fields):
        public_a[i] = rng.integers(0, field.q_int, n, dtype=np.uint64)
        public_b[i] = field.sub(error[i], field.mul(public_a[i], secret[i]))
    return KeyPair(secret, public_b, public_a, ctx.hash)


def encode(values, params: CkksParams, scale: float | None = None) -> PlainPoly:
    """Canonical-embedding encode of a real vector into plaintext slots."""
    ctx = _context(params)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    half = params.slot_count
    if values.size > half:
        raise CapacityError(f"{values.size} values exceed {half} slots")
    scale = params.scale if scale is None else float(scale)
    z = np.zeros(half, dtype=np.complex128)
    z[: values.size] = values * scale
    w = np.concatenate([z, np.conj(z)[::-1]])
    coeffs = np.real(ctx.embed_fwd * np.fft.fft(w)) / params.poly_degree
    rounded = np.rint(coeffs)
    if np.any(np.abs(rounded) >= 2**62):
        raise CapacityError("encoded coefficients overflow the modulus headroom")
    rows = _signed_to_rows(ctx, rounded.astype(np.int64), ctx.fresh_level)
    return PlainPoly(rows, ctx.fresh_level, scale, values.size, ctx.hash)


def _crt_centered(ctx: _Context, residue_rows: np.ndarray, level: int) -> np.ndarray:
    """Combine per-prime coefficient residues into centered integers (float64)."""
    primes = ctx.active_primes[: level + 1]
    if level == 0:
        return ctx.fields[0].centered(residue_rows[0]).astype(np.float64)
    modulus = math.prod(primes)
    acc = np.zeros(ctx.params.poly_degree, dtype=object)
    for i, q in enumerate(primes):
        m_i = modulus // q
        y_i = pow(m_i, -1, q)
        acc += residue_rows[i].astype(object) * (m_i * y_i)
    acc %= modulus
    centered = np.where(acc > modulus // 2, acc - modulus, acc)
    return centered.astype(np.float64)


def decode(pt: PlainPoly, params: CkksParams | None = None) -> np.ndarray:
    """Slot values of a plaintext; inverse of encode up to encoding error."""
    ctx = _context(params) if params is not None else _ctx_of(pt)
    if pt.params_hash != ctx.hash:
        raise StateError("plaintext was produced under different parameters")
    residues = np.empty_like(pt.rows)
    for i in range(pt.level + 1):
        residues[i] = ctx.fields[i].intt(pt.rows[i])
    coeffs = _crt_centered(ctx, residues, pt.level)
    n = ctx.params.poly_degree
    slots = n * np.fft.ifft(coeffs * ctx.embed_inv)[: ctx.params.slot_count]
    return np.real(slots) / pt.scale


def encrypt(pt: PlainPoly, key: KeyPair, rng) -> Ciphertext:
    """Fresh randomized encryption at the top level of the active chain."""
    if pt.params_hash != key.params_hash:
        raise StateError("plaintext/key parameter mismatch")
    ctx = _ctx_of(pt)
    rng = _as_rng(rng)
    if pt.level != ctx.fresh_level:
        raise StateError("can only encrypt full-level plaintexts")
    n = ctx.params.poly_degree
    level = ctx.fresh_level
    u = _signed_to_rows(ctx, _sample_ternary(rng, n), level)
    e0 = _signed_to_rows(ctx, _sample_cbd(rng, n), level)
    e1 = _signed_to_rows(ctx, _sample_cbd(rng, n), level)
    c0 = np.empty_like(pt.rows)
    c1 = np.empty_like(pt.rows)
    for i, field in enumerate(ctx.fields):
        c0[i] = field.add(field.add(field.mul(key.public_b[i], u[i]), e0[i]), pt.rows[i])
        c1[i] = field.add(field.mul(key.public_a[i], u[i]), e1[i])
    return Ciphertext(c0, c1, level, pt.scale, pt.slot_fill, pt.params_hash)


def decrypt(ct: Ciphertext, key: KeyPair) -> PlainPoly:
    if key.params_hash != ct.params_hash:
        raise StateError("ciphertext/key parameter mismatch")
    ctx = _ctx_of(ct)
    rows = np.empty_like(ct.c0)
    for i in range(ct.level + 1):
        field = ctx.fields[i]
        rows[i] = field.add(ct.c0[i], field.mul(ct.c1[i], key.secret[i]))
    return PlainPoly(rows, ct.level, ct.scale, ct.slot_fill, ct.params_hash)


def add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition; operands must agree in params, level, and scale."""
    if a.params_hash != b.params_hash:
        raise StateError("parameter mismatch")
    if a.level != b.level:
        raise StateError(f"level mismatch: {a.level} vs {b.level}")
    if not math.isclose(a.scale, b.scale, rel_tol=1e-12):
        raise StateError(f"scale mismatch: {a.scale} vs {b.scale}")
    ctx = _ctx_of(a)
    c0 = np.empty_like(a.c0)
    c1 = np.empty_like(a.c1)
    for i in range(a.level + 1):
        field = ctx.fields[i]
        c0[i] = field.add(a.c0[i], b.c0[i])
        c1[i] = field.add(a.c1[i], b.c1[i])
    return Ciphertext(c0, c1, a.level, a.scale, max(a.slot_fill, b.slot_fill), a.params_hash)


def mul_scalar_rescale(ct: Ciphertext, scalar: float) -> Ciphertext:
    """Multiply by a plaintext scalar and rescale once; consumes one level.

    The scalar is encoded at the exact value of the prime being consumed, so
    the output scale equals the input scale bit for bit.
    """
    ctx = _ctx_of(ct)
    if ct.level < 1:
        raise DepthExhaustedError("no modulus level left for rescaling")
    q_last = ctx.active_primes[ct.level]
    coeff = round(float(scalar) * q_last)
    c0 = np.empty_like(ct.c0)
    c1 = np.empty_like(ct.c1)
    for i in range(ct.level + 1):
        field = ctx.fields[i]
        m = field.reduce_signed(np.full(1, coeff, dtype=np.int64))[0]
        # constant polynomials are constant in the NTT domain too
        c0[i] = field.mul(ct.c0[i], m)
        c1[i] = field.mul(ct.c1[i], m)
    scaled = Ciphertext(c0, c1, ct.level, ct.scale * q_last, ct.slot_fill, ct.params_hash)
    return _rescale(ctx, scaled)


def _rescale(ctx: _Context, ct: Ciphertext) -> Ciphertext:
    """Drop the last active prime: c' = (c - [c]_q_last) / q_last per prime."""
    level = ct.level
    q_last = ctx.active_primes[level]
    last_field = ctx.fields[level]
    out0 = np.empty((level, ctx.params.poly_degree), dtype=np.uint64)
    out1 = np.empty_like(out0)
    for comp_in, comp_out in ((ct.c0, out0), (ct.c1, out1)):
        centered = last_field.centered(last_field.intt(comp_in[level]))
        for i in range(level):
            field = ctx.fields[i]
            lifted = field.ntt(field.reduce_signed(centered))
            inv_q = np.uint64(pow(q_last % field.q_int, field.q_int - 2, field.q_int))
            comp_out[i] = field.mul(field.sub(comp_in[i], lifted), inv_q)
    return Ciphertext(out0, out1, level - 1, ct.scale / q_last, ct.slot_fill, ct.params_hash)


# -- update packing ----------------------------------------------------------


def pack_update(flat: np.ndarray, params: CkksParams) -> list[np.ndarray]:
    """Chunk a flat update into slot-sized pieces ready for encode/encrypt."""
    flat = np.asarray(flat, dtype=np.float64).reshape(-1)
    size = params.slot_count
    if flat.size == 0:
        return []
    return [flat[i : i + size] for i in range(0, flat.size, size)]


def unpack_update(chunks, manifest) -> np.ndarray:
    """Reassemble decrypted chunks and truncate padding to the manifest length."""
    total = manifest.total_length if hasattr(manifest, "total_length") else int(manifest)
    if chunks:
        flat = np.concatenate([np.asarray(c, dtype=np.float64).reshape(-1) for c in chunks])
    else:
        flat = np.zeros(0, dtype=np.float64)
    if flat.size < total:
        raise LayoutError(f"chunks carry {flat.size} values, manifest wants {total}")
    return flat[:total]


# -- serialization -----------------------------------------------------------


def serialize_ct(ct: Ciphertext) -> bytes:
    """Wire format: 15-byte header (params hash, level, log2 scale, slot fill)
    followed by the RNS rows, component-major, little-endian u64."""
    scale_log2 = math.log2(ct.scale)
    if scale_log2 != int(scale_log2) or not 0 < int(scale_log2) < 65536:
        raise StateError("only power-of-two scales serialize")
    header = _HEADER.pack(ct.params_hash, ct.level, int(scale_log2), ct.slot_fill)
    return header + ct.c0.astype("<u8").tobytes() + ct.c1.astype("<u8").tobytes()


def deserialize_ct(data: bytes, params: CkksParams) -> Ciphertext:
    ctx = _context(params)
    if len(data) < _HEADER.size:
        raise DecodeError("ciphertext buffer shorter than header")
    params_hash, level, scale_log2, slot_fill = _HEADER.unpack_from(data)
    if params_hash != ctx.hash:
        raise DecodeError("parameter hash mismatch")
    if level >= len(ctx.active_primes):
        raise DecodeError(f"level {level} outside the active chain")
    n = params.poly_degree
    expected = _HEADER.size + 2 * (level + 1) * n * 8
    if len(data) != expected:
        raise DecodeError(f"expected {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<u8", offset=_HEADER.size)
    rows = body.reshape(2, level + 1, n).astype(np.uint64)
    for i in range(level + 1):
        if np.any(rows[:, i, :] >= ctx.fields[i].q):
            raise DecodeError("coefficient outside its prime modulus")
    return Ciphertext(
        rows[0].copy(), rows[1].copy(), level, float(2**scale_log2), slot_fill, params_hash
    )
