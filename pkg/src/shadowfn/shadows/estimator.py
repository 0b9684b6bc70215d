"""Overlap estimation from classical-shadow archives.

Each record contributes, for a determinant bitstring ``D``,

    2 * prod_blocks [ (2^m + 1) <D_b|U_b^dag|b_b><b_b|U_b|0_b> - delta(D_b, 0) ]

where the product runs over independent Clifford blocks of size ``m``. The
``-delta`` term is the trace part of the inverted block channel. A single
block covering the register uses the plain ``2 (2^n + 1) <D|U^dag|b><b|U|0>``
form, which differs from the full inverse only at ``D = 0``.
"""

from __future__ import annotations

import logging

import numba
import numpy as np

from ..chemio import Determinant, JordanWignerMap
from ..lucj import AlignmentError, TrialState, align_and_project
from .tableau import reduce_stabilizers, snapshot_term

log = logging.getLogger(__name__)

__all__ = ["OverlapOracle", "estimate_overlap", "estimate_overlaps", "overlap_oracle", "record_estimates"]


@numba.njit(cache=True)
def _record_values(xs, zs, r, b, n, bs, dets, out):
    """Per-record estimator values, ``out[k, i]`` for record k and determinant i."""
    m = (1 << bs) - 1
    scale = (1 << bs) + 1.0
    bx = np.empty(2 * bs, dtype=np.int64)
    bz = np.empty(2 * bs, dtype=np.int64)
    br = np.empty(2 * bs, dtype=np.int64)
    sx = np.empty(bs, dtype=np.int64)
    sz = np.empty(bs, dtype=np.int64)
    se = np.empty(bs, dtype=np.int64)
    pcol = np.empty(bs, dtype=np.int64)
    trace = 1.0 if bs < n else 0.0
    for k in range(xs.shape[0]):
        for i in range(dets.shape[0]):
            out[k, i] = 2.0
        for o in range(0, n, bs):
            for j in range(bs):
                bx[j] = (xs[k, o + j] >> o) & m
                bz[j] = (zs[k, o + j] >> o) & m
                br[j] = r[k, o + j]
                bx[bs + j] = (xs[k, n + o + j] >> o) & m
                bz[bs + j] = (zs[k, n + o + j] >> o) & m
                br[bs + j] = r[k, n + o + j]
            kk = reduce_stabilizers(bx, bz, br, bs, sx, sz, se, pcol)
            bb = (b[k] >> o) & m
            for i in range(dets.shape[0]):
                dd = (dets[i] >> o) & m
                g = snapshot_term(bx, bz, br, bs, sx, sz, se, pcol, kk, bb, dd)
                out[k, i] *= scale * g - (trace if dd == 0 else 0.0)


@numba.njit(cache=True)
def _record_sums(xs, zs, r, b, n, bs, dets, chunk):
    total = np.zeros(dets.shape[0], dtype=np.complex128)
    buf = np.empty((chunk, dets.shape[0]), dtype=np.complex128)
    for start in range(0, xs.shape[0], chunk):
        stop = min(start + chunk, xs.shape[0])
        view = buf[: stop - start]
        _record_values(xs[start:stop], zs[start:stop], r[start:stop], b[start:stop], n, bs, dets, view)
        for k in range(stop - start):
            for i in range(dets.shape[0]):
                total[i] += view[k, i]
    return total


def _bitstrings(archive, dets) -> np.ndarray:
    out = []
    jw = None
    for d in dets:
        if isinstance(d, Determinant):
            jw = jw or JordanWignerMap(archive.n_qubits // 2)
            out.append(jw.basis_index(d))
        else:
            out.append(int(d))
    arr = np.array(out, dtype=np.int64)
    if np.any((arr < 0) | (arr >= 1 << archive.n_qubits)):
        raise ValueError("determinant bitstring outside the archive's register")
    return arr


def record_estimates(archive, dets, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Single-snapshot estimates, shape ``(records, len(dets))``."""
    sl = slice(start, stop)
    xs, zs, r, b = archive.xs[sl], archive.zs[sl], archive.r[sl], archive.b[sl]
    out = np.empty((xs.shape[0], len(dets)), dtype=np.complex128)
    _record_values(xs, zs, r, b, archive.n_qubits, archive.block_size, _bitstrings(archive, dets), out)
    return out


def estimate_overlaps(archive, dets, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Mean estimator over records ``start:stop`` for every entry of ``dets``."""
    sl = slice(start, stop)
    xs, zs, r, b = archive.xs[sl], archive.zs[sl], archive.r[sl], archive.b[sl]
    if xs.shape[0] == 0:
        raise ValueError("cannot estimate overlaps from an empty archive")
    total = _record_sums(xs, zs, r, b, archive.n_qubits, archive.block_size, _bitstrings(archive, dets), 4096)
    return total / xs.shape[0]


def estimate_overlap(archive, det) -> complex:
    """Raw (unaligned) overlap estimate for one determinant or basis-state integer."""
    return complex(estimate_overlaps(archive, [det])[0])


class OverlapOracle:
    """Phase-aligned, real trial overlaps from a shadow archive, memoized per determinant."""

    def __init__(self, archive, d0: Determinant, zero_tolerance: float = 1e-12):
        self.archive = archive
        self.d0 = d0
        self.zero_tolerance = zero_tolerance
        self._raw: dict = {}
        z0 = self.raw(d0)
        if abs(z0) < zero_tolerance:
            raise AlignmentError(
                f"estimated overlap with {d0} is below {zero_tolerance}; choose a different alignment determinant")
        self.theta0 = float(np.angle(z0))
        self._rot = np.exp(-1j * self.theta0)

    def prefetch(self, dets) -> None:
        missing = [d for d in dict.fromkeys(dets) if d not in self._raw]
        if missing:
            for d, z in zip(missing, estimate_overlaps(self.archive, missing)):
                self._raw[d] = complex(z)

    def raw(self, det) -> complex:
        if det not in self._raw:
            self.prefetch([det])
        return self._raw[det]

    def __call__(self, det) -> float:
        return float((self.raw(det) * self._rot).real)

    @property
    def n_cached(self) -> int:
        return len(self._raw)

    def trial_state(self, dets) -> TrialState:
        dets = list(dets)
        self.prefetch(dets)
        raw = {d: self._raw[d] for d in dets}
        raw.setdefault(self.d0, self._raw[self.d0])
        return align_and_project(raw, self.d0, source="shadow")


def overlap_oracle(archive, d0: Determinant, zero_tolerance: float = 1e-12) -> OverlapOracle:
    return OverlapOracle(archive, d0, zero_tolerance)
