"""Stabilizer tableaus, uniform Clifford sampling and measurement-circuit synthesis.

A Clifford ``U`` on ``n`` qubits is stored by its action on Pauli generators:
row ``j < n`` is ``U X_j U^dag`` and row ``n + j`` is ``U Z_j U^dag``. Each row
is kept as bit masks ``(x, z)`` over qubits plus a sign bit ``r`` meaning
``(-1)^r i^{x.z} X^x Z^z`` (so every row is a Hermitian Pauli).

Inside the kernels a general Pauli is a triple ``(x, z, e)`` standing for
``i^e X^x Z^z``; with that convention
``(i^a X^x1 Z^z1)(i^b X^x2 Z^z2) = i^(a + b + 2 |z1 & x2|) X^(x1^x2) Z^(z1^z2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..circuitsim import Circuit, Gate

__all__ = [
    "CliffordTableau",
    "ClassicalPrefix",
    "clifford_to_circuit",
    "sample_clifford",
    "sampler_draws",
    "stabilizer_amplitude",
]

DecompositionError = RuntimeError


# ----------------------------------------------------------------------------
# bit-level kernels


@numba.njit(cache=True)
def popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@numba.njit(cache=True)
def pauli_mul(x1, z1, e1, x2, z2, e2):
    return x1 ^ x2, z1 ^ z2, (e1 + e2 + 2 * popcount(z1 & x2)) & 3


@numba.njit(cache=True)
def row_phase(xs, zs, r, k):
    return (2 * r[k] + popcount(xs[k] & zs[k])) & 3


@numba.njit(cache=True)
def conjugate(xs, zs, r, n, x, z, e):
    """``U (i^e X^x Z^z) U^dag`` for the tableau rows ``(xs, zs, r)``."""
    ox, oz, oe = 0, 0, e
    for j in range(n):
        if (x >> j) & 1:
            ox, oz, oe = pauli_mul(ox, oz, oe, xs[j], zs[j], row_phase(xs, zs, r, j))
    for j in range(n):
        if (z >> j) & 1:
            k = n + j
            ox, oz, oe = pauli_mul(ox, oz, oe, xs[k], zs[k], row_phase(xs, zs, r, k))
    return ox, oz, oe


@numba.njit(cache=True)
def _form(a, b, n):
    m = (1 << n) - 1
    return popcount(((a & m) & (b >> n)) ^ ((a >> n) & (b & m))) & 1


@numba.njit(cache=True)
def _combine(basis, size, bits):
    v = 0
    for k in range(size):
        if (bits >> k) & 1:
            v ^= basis[k]
    return v


@numba.njit(cache=True)
def sample_symplectic_rows(n, vchoice, wchoice, phases, xs, zs, r):
    """Fill ``(xs, zs, r)`` with the Clifford selected by the given draws.

    ``vchoice[j]`` lies in ``[1, 4^(n-j))`` and ``wchoice[j]`` in ``[0, 4^(n-j))``.
    Every draw sequence maps to a distinct symplectic basis, so uniform draws
    give a uniform symplectic matrix; independent uniform phase bits then make
    the Clifford uniform modulo global phase.
    """
    width = 2 * n
    mask = (1 << n) - 1
    basis = np.empty(width, dtype=np.int64)
    for k in range(width):
        basis[k] = 1 << k
    size = width
    pivots = np.zeros(width, dtype=np.int64)
    for j in range(n):
        v = _combine(basis, size, vchoice[j])
        w = _combine(basis, size, wchoice[j])
        if _form(v, w, n) == 0:
            for k in range(size):
                if _form(v, basis[k], n):
                    w ^= basis[k]
                    break
        xs[j] = v & mask
        zs[j] = v >> n
        xs[n + j] = w & mask
        zs[n + j] = w >> n
        # restrict to the symplectic complement of span{v, w}
        pivots[:] = 0
        for k in range(size):
            u = basis[k]
            fw = _form(u, w, n)
            fv = _form(u, v, n)
            if fw:
                u ^= v
            if fv:
                u ^= w
            for bit in range(width - 1, -1, -1):
                if not (u >> bit) & 1:
                    continue
                if pivots[bit]:
                    u ^= pivots[bit]
                else:
                    pivots[bit] = u
                    break
        size = 0
        for bit in range(width):
            if pivots[bit]:
                basis[size] = pivots[bit]
                size += 1
    for k in range(width):
        r[k] = phases[k]


# --- conjugation of a Pauli through single gates, P -> G^dag P G


@numba.njit(cache=True)
def _conj_h(x, z, e, q):
    a = (x >> q) & 1
    b = (z >> q) & 1
    x = (x & ~(1 << q)) | (b << q)
    z = (z & ~(1 << q)) | (a << q)
    return x, z, (e + 2 * (a & b)) & 3


@numba.njit(cache=True)
def _conj_sdg(x, z, e, q):
    a = (x >> q) & 1
    return x, z ^ (a << q), (e + a) & 3


@numba.njit(cache=True)
def _conj_cz(x, z, e, p, q):
    a = (x >> p) & 1
    b = (x >> q) & 1
    return x, z ^ ((b << p) | (a << q)), (e + 2 * (a & b)) & 3


@numba.njit(cache=True)
def decompose(xs, zs, r, n, gamma, amap):
    """Split ``U = F W`` with ``W`` an H / S^dag / CZ / H layer sequence and ``F`` Hadamard-free.

    ``W`` in time order: H on ``hset``, S^dag where ``gamma[j]`` has bit j,
    CZ on pairs with ``gamma[j]`` bit k (j < k), then H on every qubit.
    ``F`` sends ``|b'>`` to a phase times ``|c ^ xor_{j in b'} amap[j]>``.
    Returns ``(hset, c, ok)``.
    """
    full = (1 << n) - 1
    gx = np.zeros(n, dtype=np.int64)
    gz = np.zeros(n, dtype=np.int64)
    # unsigned generators of span{U^dag Z_j U}, read from the symplectic inverse
    for j in range(n):
        for k in range(n):
            if (xs[n + k] >> j) & 1:
                gx[j] |= 1 << k
            if (xs[k] >> j) & 1:
                gz[j] |= 1 << k
    row = 0
    pivmask = 0
    for col in range(n):
        sel = -1
        for i in range(row, n):
            if (gx[i] >> col) & 1:
                sel = i
                break
        if sel < 0:
            continue
        gx[row], gx[sel] = gx[sel], gx[row]
        gz[row], gz[sel] = gz[sel], gz[row]
        for i in range(n):
            if i != row and (gx[i] >> col) & 1:
                gx[i] ^= gx[row]
                gz[i] ^= gz[row]
        pivmask |= 1 << col
        row += 1
    hset = full & ~pivmask
    for i in range(n):
        nx = (gx[i] & ~hset) | (gz[i] & hset)
        nz = (gz[i] & ~hset) | (gx[i] & hset)
        gx[i] = nx
        gz[i] = nz
    for col in range(n):
        sel = -1
        for i in range(col, n):
            if (gx[i] >> col) & 1:
                sel = i
                break
        if sel < 0:
            return hset, 0, False
        gx[col], gx[sel] = gx[sel], gx[col]
        gz[col], gz[sel] = gz[sel], gz[col]
        for i in range(n):
            if i != col and (gx[i] >> col) & 1:
                gx[i] ^= gx[col]
                gz[i] ^= gz[col]
    for j in range(n):
        gamma[j] = gz[j]
        for k in range(n):
            if ((gz[j] >> k) & 1) != ((gz[k] >> j) & 1):
                return hset, 0, False
    # images under F = U W^dag, conjugating through W in reverse time order
    zrows = np.zeros(n, dtype=np.int64)
    signs = 0
    for kind in range(2):
        for j in range(n):
            x = (1 << j) if kind == 0 else 0
            z = 0 if kind == 0 else (1 << j)
            e = 0
            for q in range(n):
                x, z, e = _conj_h(x, z, e, q)
            for p in range(n):
                for q in range(p + 1, n):
                    if (gamma[p] >> q) & 1:
                        x, z, e = _conj_cz(x, z, e, p, q)
            for q in range(n):
                if (gamma[q] >> q) & 1:
                    x, z, e = _conj_sdg(x, z, e, q)
            for q in range(n):
                if (hset >> q) & 1:
                    x, z, e = _conj_h(x, z, e, q)
            x, z, e = conjugate(xs, zs, r, n, x, z, e)
            if kind == 0:
                amap[j] = x
            else:
                if x != 0 or (e & 1):
                    return hset, 0, False
                zrows[j] = z
                signs |= (e >> 1) << j
    # solve (-1)^(zrows[j] . c) = (-1)^(signs_j) over GF(2)
    rhs = np.zeros(n, dtype=np.int64)
    for j in range(n):
        rhs[j] = (signs >> j) & 1
    c = 0
    row = 0
    pcols = np.full(n, -1, dtype=np.int64)
    for col in range(n):
        sel = -1
        for i in range(row, n):
            if (zrows[i] >> col) & 1:
                sel = i
                break
        if sel < 0:
            continue
        zrows[row], zrows[sel] = zrows[sel], zrows[row]
        rhs[row], rhs[sel] = rhs[sel], rhs[row]
        for i in range(n):
            if i != row and (zrows[i] >> col) & 1:
                zrows[i] ^= zrows[row]
                rhs[i] ^= rhs[row]
        pcols[row] = col
        row += 1
    if row != n:
        return hset, 0, False
    for i in range(n):
        c |= rhs[i] << pcols[i]
    return hset, c, True


@numba.njit(cache=True)
def apply_prefix(c, amap, n, bprime):
    b = c
    for j in range(n):
        if (bprime >> j) & 1:
            b ^= amap[j]
    return b


W_H, W_SDG, W_CZ = 0, 1, 2


@numba.njit(cache=True)
def measurement_ops(n, hset, gamma):
    """Time-ordered (kind, q0, q1) list for ``W`` using the W_* codes."""
    m = 0
    ops = np.empty((2 * n + n * (n + 1) // 2, 3), dtype=np.int64)
    for q in range(n):
        if (hset >> q) & 1:
            ops[m, 0], ops[m, 1], ops[m, 2] = W_H, q, -1
            m += 1
    for q in range(n):
        if (gamma[q] >> q) & 1:
            ops[m, 0], ops[m, 1], ops[m, 2] = W_SDG, q, -1
            m += 1
    for p in range(n):
        for q in range(p + 1, n):
            if (gamma[p] >> q) & 1:
                ops[m, 0], ops[m, 1], ops[m, 2] = W_CZ, p, q
                m += 1
    for q in range(n):
        ops[m, 0], ops[m, 1], ops[m, 2] = W_H, q, -1
        m += 1
    return ops[:m]


# ----------------------------------------------------------------------------
# stabilizer-state amplitudes


@numba.njit(cache=True)
def reduce_stabilizers(xs, zs, r, n, sx, sz, se, pcol):
    """Row-reduce the stabilizers ``U Z_j U^dag`` of ``U|0>`` on their X part.

    On return rows ``0..k-1`` have distinct X pivots (``pcol``) that appear in
    no other row, rows ``k..n-1`` are Z-only. Returns ``k``.
    """
    for j in range(n):
        sx[j] = xs[n + j]
        sz[j] = zs[n + j]
        se[j] = row_phase(xs, zs, r, n + j)
    k = 0
    for col in range(n):
        sel = -1
        for i in range(k, n):
            if (sx[i] >> col) & 1:
                sel = i
                break
        if sel < 0:
            continue
        sx[k], sx[sel] = sx[sel], sx[k]
        sz[k], sz[sel] = sz[sel], sz[k]
        se[k], se[sel] = se[sel], se[k]
        for i in range(n):
            if i != k and (sx[i] >> col) & 1:
                sx[i], sz[i], se[i] = pauli_mul(sx[i], sz[i], se[i], sx[k], sz[k], se[k])
        pcol[k] = col
        k += 1
    return k


@numba.njit(cache=True)
def in_support(sx, sz, se, n, k, b):
    for i in range(k, n):
        if ((se[i] >> 1) + popcount(sz[i] & b)) & 1:
            return False
    return True


@numba.njit(cache=True)
def stabilizer_with_x(sx, sz, se, k, pcol, u):
    """Product of reduced stabilizers whose X part equals ``u``; ``ok`` false if none."""
    ox, oz, oe = 0, 0, 0
    for i in range(k):
        if (u >> pcol[i]) & 1:
            ox, oz, oe = pauli_mul(ox, oz, oe, sx[i], sz[i], se[i])
    return ox, oz, oe, ox == u


_IPOW = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])


@numba.njit(cache=True)
def snapshot_term(xs, zs, r, n, sx, sz, se, pcol, k, b, d):
    """``<d|U^dag|b><b|U|0>`` given the reduced stabilizers of ``U|0>`` (global phase cancels)."""
    if not in_support(sx, sz, se, n, k, b):
        return 0j
    u, v, e = 0, 0, 0
    for j in range(n):
        if (d >> j) & 1:
            u, v, e = pauli_mul(u, v, e, xs[j], zs[j], row_phase(xs, zs, r, j))
    su, sv, s_e, ok = stabilizer_with_x(sx, sz, se, k, pcol, u)
    if not ok:
        return 0j
    phase = (s_e - e) & 3
    sign = popcount((v ^ sv) & (b ^ u)) & 1
    val = _IPOW[phase] * 0.5**k
    return -val if sign else val


@numba.njit(cache=True)
def amplitude(xs, zs, r, n, b, x):
    """``<x|U^dag|b>`` with the global phase fixed so ``<b0|U|0> > 0`` for the canonical support point ``b0``."""
    sx = np.empty(n, dtype=np.int64)
    sz = np.empty(n, dtype=np.int64)
    se = np.empty(n, dtype=np.int64)
    pcol = np.empty(n, dtype=np.int64)
    k = reduce_stabilizers(xs, zs, r, n, sx, sz, se, pcol)
    # canonical support point: solve the Z-only constraints with free bits zero
    zr = sz[k:].copy()
    rhs = np.empty(n - k, dtype=np.int64)
    for i in range(n - k):
        rhs[i] = (se[k + i] >> 1) & 1
    zcols = np.empty(n - k, dtype=np.int64)
    row = 0
    for col in range(n):
        sel = -1
        for i in range(row, n - k):
            if (zr[i] >> col) & 1:
                sel = i
                break
        if sel < 0:
            continue
        zr[row], zr[sel] = zr[sel], zr[row]
        rhs[row], rhs[sel] = rhs[sel], rhs[row]
        for i in range(n - k):
            if i != row and (zr[i] >> col) & 1:
                zr[i] ^= zr[row]
                rhs[i] ^= rhs[row]
        zcols[row] = col
        row += 1
    b0 = 0
    for i in range(row):
        b0 |= rhs[i] << zcols[i]
    # <b|U|x> = <b| P_x |phi>,  P_x = U X^x U^dag
    u, v, e = 0, 0, 0
    for j in range(n):
        if (x >> j) & 1:
            u, v, e = pauli_mul(u, v, e, xs[j], zs[j], row_phase(xs, zs, r, j))
    y = b ^ u
    if not in_support(sx, sz, se, n, k, y):
        return 0j
    w = y ^ b0
    su, sv, s_e, ok = stabilizer_with_x(sx, sz, se, k, pcol, w)
    if not ok:
        return 0j
    # <y|phi> = i^(-s_e) (-1)^(sv . y) <b0|phi>
    ph = (e - s_e) & 3
    sign = (popcount(v & y) + popcount(sv & y)) & 1
    val = _IPOW[ph] * 0.5 ** (0.5 * k)
    if sign:
        val = -val
    return np.conj(val)


# ----------------------------------------------------------------------------
# public API


def sampler_draws(n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random inputs consumed by :func:`sample_symplectic_rows` for one ``n``-qubit Clifford."""
    highs = np.array([4 ** (n - j) for j in range(n)], dtype=np.int64)
    v = rng.integers(1, highs)
    w = rng.integers(0, highs)
    phases = rng.integers(0, 2, size=2 * n)
    return v.astype(np.int64), w.astype(np.int64), phases.astype(np.int64)


@dataclass(frozen=True, eq=False)
class CliffordTableau:
    n: int
    xs: np.ndarray
    zs: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("xs", "zs", "r"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (2 * self.n,):
                raise ValueError(f"{name} must have length {2 * self.n}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def identity(cls, n: int) -> "CliffordTableau":
        xs = np.array([1 << j for j in range(n)] + [0] * n)
        zs = np.array([0] * n + [1 << j for j in range(n)])
        return cls(n, xs, zs, np.zeros(2 * n))

    @classmethod
    def from_matrix(cls, S, phases) -> "CliffordTableau":
        """From a 2n x 2n bit matrix whose rows are (x bits | z bits)."""
        S = np.asarray(S, dtype=np.int64)
        n = S.shape[0] // 2
        weights = 1 << np.arange(n)
        return cls(n, S[:, :n] @ weights, S[:, n:] @ weights, np.asarray(phases))

    @property
    def matrix(self) -> np.ndarray:
        bits = (np.arange(self.n))
        x = (self.xs[:, None] >> bits) & 1
        z = (self.zs[:, None] >> bits) & 1
        return np.hstack([x, z]).astype(np.uint8)

    def is_symplectic(self) -> bool:
        S = self.matrix.astype(np.int64)
        n = self.n
        omega = np.block([[np.zeros((n, n), int), np.eye(n, dtype=int)], [np.eye(n, dtype=int), np.zeros((n, n), int)]])
        return bool(np.array_equal((S @ omega @ S.T) % 2, omega))

    def __eq__(self, other):
        return (isinstance(other, CliffordTableau) and self.n == other.n
                and np.array_equal(self.xs, other.xs) and np.array_equal(self.zs, other.zs)
                and np.array_equal(self.r, other.r))

    def __hash__(self):
        return hash((self.n, self.xs.tobytes(), self.zs.tobytes(), self.r.tobytes()))

    def conjugate(self, x: int, z: int, e: int = 0) -> tuple[int, int, int]:
        """``U (i^e X^x Z^z) U^dag`` as ``(x, z, e)``."""
        ox, oz, oe = conjugate(self.xs, self.zs, self.r, self.n, x, z, e)
        return int(ox), int(oz), int(oe)


def sample_clifford(n: int, rng) -> CliffordTableau:
    """Uniformly random ``n``-qubit Clifford (modulo global phase)."""
    if n < 1:
        raise ValueError("n must be positive")
    v, w, phases = sampler_draws(n, rng)
    xs = np.empty(2 * n, dtype=np.int64)
    zs = np.empty(2 * n, dtype=np.int64)
    r = np.empty(2 * n, dtype=np.int64)
    sample_symplectic_rows(n, v, w, phases, xs, zs, r)
    return CliffordTableau(n, xs, zs, r)


@dataclass(frozen=True, eq=False)
class ClassicalPrefix:
    """Hadamard-free part of a Clifford, acting on basis states as ``b' -> c ^ A b'``."""

    n: int
    c: int
    amap: np.ndarray

    def __call__(self, bprime: int) -> int:
        return int(apply_prefix(self.c, self.amap, self.n, int(bprime)))


def clifford_to_circuit(t: CliffordTableau) -> tuple[Circuit, ClassicalPrefix]:
    """Measurement circuit ``W`` and classical map of ``F`` with ``U = F W``.

    Measuring ``U|psi>`` in the computational basis is equivalent to measuring
    ``W|psi>`` and passing the outcome through the returned prefix map. The
    circuit holds only H, S^dag (as RZ with a compensating global phase) and
    CZ gates.
    """
    n = t.n
    gamma = np.zeros(n, dtype=np.int64)
    amap = np.zeros(n, dtype=np.int64)
    hset, c, ok = decompose(t.xs, t.zs, t.r, n, gamma, amap)
    if not ok:
        raise DecompositionError("Clifford decomposition failed; tableau is not symplectic")
    circ = Circuit(n)
    for kind, q0, q1 in measurement_ops(n, hset, gamma):
        if kind == W_H:
            circ.add(Gate.H, q0)
        elif kind == W_SDG:
            circ.add(Gate.RZ, q0, -np.pi / 2)
            circ.global_phase -= np.pi / 4
        else:
            circ.add(Gate.CZ, (q0, q1))
    amap.setflags(write=False)
    return circ, ClassicalPrefix(n, int(c), amap)


def stabilizer_amplitude(t: CliffordTableau, b: int, x: int) -> complex:
    """``<x|U^dag|b>``, exact up to the tableau's undefined global phase (fixed canonically)."""
    return complex(amplitude(t.xs, t.zs, t.r, t.n, int(b), int(x)))


def amplitude_matrix(t: CliffordTableau) -> np.ndarray:
    """Dense ``U^dag`` in the canonical phase, entry ``[x, b] = <x|U^dag|b>``."""
    dim = 1 << t.n
    out = np.empty((dim, dim), dtype=complex)
    for x in range(dim):
        for b in range(dim):
            out[x, b] = amplitude(t.xs, t.zs, t.r, t.n, b, x)
    return out
