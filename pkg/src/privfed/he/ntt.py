"""Negacyclic NTT arithmetic modulo word-sized primes.

Everything a leveled RLWE scheme needs from the ring Z_q[X]/(X^N + 1):
vectorized Montgomery multiplication over uint64 numpy arrays, prime
generation with q = 1 (mod 2N), and iterative forward/inverse transforms
with bit-reversed twiddle tables.  Pointwise products of transformed
polynomials realize negacyclic convolution.
"""

from __future__ import annotations

import numpy as np

MASK32 = np.uint64(0xFFFFFFFF)
SHIFT32 = np.uint64(32)

# deterministic Miller-Rabin witnesses for n < 2^64
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def generate_ntt_primes(bit_sizes, poly_degree: int) -> list[int]:
    """Distinct primes, one per requested bit size, each = 1 mod 2N and < 2^62."""
    step = 2 * poly_degree
    found: list[int] = []
    for bits in bit_sizes:
        if not 20 <= bits <= 61:
            raise ValueError(f"modulus bit size {bits} outside supported range [20, 61]")
        # largest c <= 2^bits with c = 1 (mod 2N)
        candidate = (1 << bits) - ((1 << bits) - 1) % step
        while candidate > (1 << (bits - 1)):
            if candidate not in found and is_prime(candidate):
                found.append(candidate)
                break
            candidate -= step
        else:
            raise ValueError(f"no {bits}-bit NTT prime for degree {poly_degree}")
    return found


def _find_psi(q: int, n: int) -> int:
    # primitive 2n-th root of unity: psi^n = -1 (mod q)
    exponent = (q - 1) // (2 * n)
    for g in range(2, 1000):
        psi = pow(g, exponent, q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ValueError(f"no primitive 2n-th root found for q={q}")


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.uint64)
    rev = np.zeros(n, dtype=np.uint64)
    for _ in range(bits):
        rev = (rev << np.uint64(1)) | (idx & np.uint64(1))
        idx >>= np.uint64(1)
    return rev.astype(np.int64)


def _mulhi(a: np.ndarray, b) -> np.ndarray:
    """High 64 bits of the 128-bit product, via 32-bit limbs."""
    a_hi = a >> SHIFT32
    a_lo = a & MASK32
    b_hi = b >> SHIFT32
    b_lo = b & MASK32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> SHIFT32) + (hi_lo & MASK32) + (lo_hi & MASK32)
    return a_hi * b_hi + (hi_lo >> SHIFT32) + (lo_hi >> SHIFT32) + (cross >> SHIFT32)


class PrimeField:
    """Vectorized arithmetic mod one NTT prime q < 2^62.

    Montgomery reduction with R = 2^64 keeps every intermediate inside
    uint64; twiddle tables are stored in Montgomery form so a butterfly
    costs a single reduction.
    """

    def __init__(self, q: int, poly_degree: int):
        if not is_prime(q) or q % (2 * poly_degree) != 1:
            raise ValueError(f"{q} is not an NTT prime for degree {poly_degree}")
        if q >= 1 << 62:
            raise ValueError("prime too large for this reduction")
        self.q_int = q
        self.n = poly_degree
        self.q = np.uint64(q)
        self.qinv = np.uint64((-pow(q, -1, 1 << 64)) % (1 << 64))
        r2 = (1 << 128) % q
        self.r2 = np.uint64(r2)

        psi = _find_psi(q, poly_degree)
        ipsi = pow(psi, q - 2, q)
        powers = [1] * poly_degree
        ipowers = [1] * poly_degree
        for i in range(1, poly_degree):
            powers[i] = powers[i - 1] * psi % q
            ipowers[i] = ipowers[i - 1] * ipsi % q
        brv = _bit_reverse_indices(poly_degree)
        self.psi_brv = self.to_mont(np.array(powers, dtype=np.uint64)[brv])
        self.ipsi_brv = self.to_mont(np.array(ipowers, dtype=np.uint64)[brv])
        self.n_inv_mont = self.to_mont(
            np.array([pow(poly_degree, q - 2, q)], dtype=np.uint64)
        )[0]

    # -- scalar/array helpers ------------------------------------------------

    def montmul(self, a, b):
        t_lo = a * b
        t_hi = _mulhi(a, b)
        m = t_lo * self.qinv
        mq_hi = _mulhi(m, self.q)
        r = t_hi + mq_hi + (t_lo != 0).astype(np.uint64)
        return np.where(r >= self.q, r - self.q, r)

    def to_mont(self, a):
        return self.montmul(a, self.r2)

    def mul(self, a, b):
        """Generic product a*b mod q (both plain representation)."""
        return self.montmul(self.to_mont(a), b)

    def add(self, a, b):
        s = a + b
        return np.where(s >= self.q, s - self.q, s)

    def sub(self, a, b):
        return np.where(a >= b, a - b, a + self.q - b)

    def neg(self, a):
        return np.where(a == 0, a, self.q - a)

    def reduce_signed(self, a: np.ndarray) -> np.ndarray:
        """Map int64 values (any sign) into [0, q)."""
        return (np.asarray(a, dtype=np.int64) % self.q_int).astype(np.uint64)

    def centered(self, a: np.ndarray) -> np.ndarray:
        """Map residues to the centered representative in (-q/2, q/2] as int64."""
        a = np.asarray(a, dtype=np.uint64)
        high = a > self.q // np.uint64(2)
        out = a.astype(np.int64)
        out[high] -= np.int64(self.q_int)
        return out

    # -- transforms ------------------------------------------------------------

    def ntt(self, a: np.ndarray) -> np.ndarray:
        """Forward negacyclic transform (Cooley-Tukey, twiddles bit-reversed)."""
        a = np.array(a, dtype=np.uint64)
        n = self.n
        t = n
        m = 1
        while m < n:
            t //= 2
            view = a.reshape(m, 2, t)
            w = self.psi_brv[m : 2 * m].reshape(m, 1)
            x = view[:, 0, :].copy()
            y = self.montmul(view[:, 1, :], w)
            view[:, 0, :] = self.add(x, y)
            view[:, 1, :] = self.sub(x, y)
            m *= 2
        return a

    def intt(self, a: np.ndarray) -> np.ndarray:
        """Inverse transform (Gentleman-Sande), including the 1/n factor."""
        a = np.array(a, dtype=np.uint64)
        n = self.n
        t = 1
        m = n
        while m > 1:
            h = m // 2
            view = a.reshape(h, 2, t)
            w = self.ipsi_brv[h : 2 * h].reshape(h, 1)
            x = view[:, 0, :].copy()
            y = view[:, 1, :].copy()
            view[:, 0, :] = self.add(x, y)
            view[:, 1, :] = self.montmul(self.sub(x, y), w)
            t *= 2
            m = h
        return self.montmul(a, self.n_inv_mont)
