"""Active-space integrals, determinant algebra and Slater-Condon matrix elements.

Determinants are stored as a pair of integer bitmasks over spatial orbitals.
Spin orbitals are numbered alpha-first (``p`` for alpha, ``n_orb + p`` for
beta), which is also the qubit numbering used by the circuit simulator, so a
determinant maps to the computational basis state whose index is
``alpha | beta << n_orb``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "Determinant",
    "FcidumpError",
    "IntegralTable",
    "JordanWignerMap",
    "connected_determinants",
    "determinant_space",
    "excitation_degree",
    "hamiltonian_element",
    "hamiltonian_matrix",
    "parse_fcidump",
    "read_fcidump",
    "write_fcidump",
]

NUMERICAL_ZERO = 1e-13


class FcidumpError(ValueError):
    """Malformed or inconsistent FCIDUMP input."""


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _bits(x: int) -> list[int]:
    out = []
    while x:
        low = x & -x
        out.append(low.bit_length() - 1)
        x ^= low
    return out


@dataclass(frozen=True, order=True)
class Determinant:
    """Occupation pattern of a Slater determinant.

    Ordering is lexicographic on ``(alpha, beta)`` so sorted populations are
    canonical.
    """

    alpha: int
    beta: int

    @classmethod
    def from_occupations(cls, alpha_occ, beta_occ) -> "Determinant":
        a = 0
        for p in alpha_occ:
            a |= 1 << p
        b = 0
        for p in beta_occ:
            b |= 1 << p
        return cls(a, b)

    @classmethod
    def from_string(cls, pattern: str) -> "Determinant":
        """Parse a site pattern such as ``"abab"`` or ``"2a0b"``.

        Character ``i`` describes spatial orbital ``i``: ``a`` alpha only,
        ``b`` beta only, ``2`` doubly occupied and ``0`` empty.
        """
        alpha = beta = 0
        for p, ch in enumerate(pattern):
            if ch in "a2":
                alpha |= 1 << p
            if ch in "b2":
                beta |= 1 << p
            if ch not in "ab20":
                raise ValueError(f"unknown occupation symbol {ch!r} in {pattern!r}")
        return cls(alpha, beta)

    def to_string(self, n_orb: int) -> str:
        chars = []
        for p in range(n_orb):
            a = (self.alpha >> p) & 1
            b = (self.beta >> p) & 1
            chars.append("2" if a and b else "a" if a else "b" if b else "0")
        return "".join(chars)

    @property
    def alpha_occ(self) -> list[int]:
        return _bits(self.alpha)

    @property
    def beta_occ(self) -> list[int]:
        return _bits(self.beta)

    @property
    def n_alpha(self) -> int:
        return _popcount(self.alpha)

    @property
    def n_beta(self) -> int:
        return _popcount(self.beta)

    def spin_orbital_mask(self, n_orb: int) -> int:
        return self.alpha | (self.beta << n_orb)

    @classmethod
    def from_spin_orbital_mask(cls, mask: int, n_orb: int) -> "Determinant":
        low = (1 << n_orb) - 1
        return cls(mask & low, (mask >> n_orb) & low)


@dataclass(frozen=True)
class JordanWignerMap:
    """Spin orbital to qubit assignment: alpha row then beta row."""

    n_orb: int

    @property
    def n_qubits(self) -> int:
        return 2 * self.n_orb

    def qubit(self, orbital: int, spin: int) -> int:
        if not 0 <= orbital < self.n_orb or spin not in (0, 1):
            raise ValueError(f"no spin orbital ({orbital}, {spin})")
        return orbital + spin * self.n_orb

    def spin_orbital(self, qubit: int) -> tuple[int, int]:
        if not 0 <= qubit < self.n_qubits:
            raise ValueError(f"qubit {qubit} out of range")
        return qubit % self.n_orb, qubit // self.n_orb

    def basis_index(self, det: Determinant) -> int:
        return det.spin_orbital_mask(self.n_orb)

    def determinant(self, index: int) -> Determinant:
        return Determinant.from_spin_orbital_mask(index, self.n_orb)


@dataclass(frozen=True, eq=False)
class IntegralTable:
    """Hamiltonian integrals in an orthonormal spatial-orbital basis.

    ``eri[p, q, r, s]`` holds ``(pq|rs)`` in chemists' notation with every
    symmetry-equivalent slot populated.
    """

    n_orb: int
    n_elec: int
    ms2: int
    e_core: float
    h: np.ndarray
    eri: np.ndarray
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.n_elec + self.ms2) % 2:
            raise FcidumpError(f"NELEC={self.n_elec} and MS2={self.ms2} have different parity")
        if not 0 <= self.n_alpha <= self.n_orb or not 0 <= self.n_beta <= self.n_orb:
            raise FcidumpError("electron count does not fit in the orbital space")

    @property
    def n_alpha(self) -> int:
        return (self.n_elec + self.ms2) // 2

    @property
    def n_beta(self) -> int:
        return (self.n_elec - self.ms2) // 2

    @property
    def jw(self) -> JordanWignerMap:
        return JordanWignerMap(self.n_orb)


def _unfold_eri(eri, p, q, r, s, value):
    for a, b, c, d in (
        (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
    ):
        eri[a, b, c, d] = value


_HEADER_RE = re.compile(r"&FCI(.*?)(&END|/)", re.IGNORECASE | re.DOTALL)


def _parse_header(text: str) -> tuple[dict, int]:
    m = _HEADER_RE.search(text)
    if m is None:
        raise FcidumpError("line 1: missing &FCI ... &END namelist header")
    body = m.group(1)
    fields = {}
    tokens = re.split(r"([A-Za-z_][A-Za-z_0-9]*)\s*=", body)
    for key, val in zip(tokens[1::2], tokens[2::2]):
        fields[key.upper()] = val.strip().strip(",").strip()
    header_end_line = text[: m.end()].count("\n") + 1
    for key in ("NORB", "NELEC"):
        if key not in fields:
            raise FcidumpError(f"line {header_end_line}: header lacks {key}")
    return fields, header_end_line


def parse_fcidump(source) -> IntegralTable:
    """Parse FCIDUMP text (a string or an iterable of lines).

    Indices are 1-based in the file and 0-based in the returned table.
    """
    text = source if isinstance(source, str) else "".join(source)
    fields, header_lines = _parse_header(text)
    try:
        n_orb = int(fields["NORB"])
        n_elec = int(fields["NELEC"])
        ms2 = int(fields.get("MS2", "0"))
    except ValueError as exc:
        raise FcidumpError(f"line {header_lines}: bad header value ({exc})") from None

    h = np.zeros((n_orb, n_orb))
    eri = np.zeros((n_orb,) * 4)
    e_core = 0.0
    lines = text.splitlines()
    for lineno in range(header_lines, len(lines)):
        raw = lines[lineno].strip()
        if not raw:
            continue
        parts = raw.replace("D", "E").replace("d", "e").split()
        if len(parts) != 5:
            raise FcidumpError(f"line {lineno + 1}: expected 'value i j k l', got {raw!r}")
        try:
            value = float(parts[0])
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError:
            raise FcidumpError(f"line {lineno + 1}: cannot parse {raw!r}") from None
        if any(x < 0 or x > n_orb for x in (i, j, k, l)):
            raise FcidumpError(f"line {lineno + 1}: index out of range for NORB={n_orb}")
        if i and j and k and l:
            _unfold_eri(eri, i - 1, j - 1, k - 1, l - 1, value)
        elif i and j and not k and not l:
            h[i - 1, j - 1] = h[j - 1, i - 1] = value
        elif not (i or j or k or l):
            e_core = value
        elif i and not (j or k or l):
            continue  # orbital energy
        else:
            raise FcidumpError(f"line {lineno + 1}: unsupported index pattern {i} {j} {k} {l}")
    return IntegralTable(n_orb, n_elec, ms2, e_core, h, eri, header=fields)


def read_fcidump(path) -> IntegralTable:
    return parse_fcidump(Path(path).read_text())


def write_fcidump(table: IntegralTable, path, tol: float = 1e-14) -> None:
    n = table.n_orb
    out = [f" &FCI NORB={n},NELEC={table.n_elec},MS2={table.ms2},",
           "  ORBSYM=" + "1," * n, "  ISYM=1,", " &END"]
    fmt = "{:.16e} {:d} {:d} {:d} {:d}"
    for i in range(n):
        for j in range(i + 1):
            for k in range(n):
                for l in range(k + 1):
                    if i * (i + 1) // 2 + j < k * (k + 1) // 2 + l:
                        continue
                    v = table.eri[i, j, k, l]
                    if abs(v) > tol:
                        out.append(fmt.format(v, i + 1, j + 1, k + 1, l + 1))
    for i in range(n):
        for j in range(i + 1):
            if abs(table.h[i, j]) > tol:
                out.append(fmt.format(table.h[i, j], i + 1, j + 1, 0, 0))
    out.append(fmt.format(table.e_core, 0, 0, 0, 0))
    Path(path).write_text("\n".join(out) + "\n")


def determinant_space(n_orb: int, n_alpha: int, n_beta: int) -> list[Determinant]:
    """All determinants with the given particle numbers, in canonical order."""

    def strings(k):
        return sorted(sum(1 << p for p in c) for c in itertools.combinations(range(n_orb), k))

    return sorted(Determinant(a, b) for a in strings(n_alpha) for b in strings(n_beta))


def excitation_degree(d1: Determinant, d2: Determinant) -> int:
    return (_popcount(d1.alpha ^ d2.alpha) + _popcount(d1.beta ^ d2.beta)) // 2


def _annihilate_sign(mask: int, q: int) -> int:
    return -1 if _popcount(mask & ((1 << q) - 1)) & 1 else 1


def _so_eri(t: IntegralTable, p, q, r, s) -> float:
    """Physicists' <pq|rs> over spin orbitals."""
    n = t.n_orb
    if p // n != r // n or q // n != s // n:
        return 0.0
    return t.eri[p % n, r % n, q % n, s % n]


def _diagonal(t: IntegralTable, occ: list[int]) -> float:
    n = t.n_orb
    e = t.e_core
    for i in occ:
        e += t.h[i % n, i % n]
    for x, i in enumerate(occ):
        for j in occ[x + 1:]:
            e += t.eri[i % n, i % n, j % n, j % n]
            if i // n == j // n:
                e -= t.eri[i % n, j % n, j % n, i % n]
    return e


def _single(t: IntegralTable, ket: int, i: int, a: int) -> float:
    n = t.n_orb
    sign = _annihilate_sign(ket, i)
    mid = ket ^ (1 << i)
    sign *= _annihilate_sign(mid, a)
    value = t.h[a % n, i % n] if a // n == i // n else 0.0
    for k in _bits(mid):
        value += _so_eri(t, a, k, i, k) - _so_eri(t, a, k, k, i)
    return sign * value


def _double(t: IntegralTable, ket: int, i: int, j: int, a: int, b: int) -> float:
    sign = _annihilate_sign(ket, i)
    m = ket ^ (1 << i)
    sign *= _annihilate_sign(m, j)
    m ^= 1 << j
    sign *= _annihilate_sign(m, b)
    m ^= 1 << b
    sign *= _annihilate_sign(m, a)
    return sign * (_so_eri(t, a, b, i, j) - _so_eri(t, a, b, j, i))


def hamiltonian_element(d_i: Determinant, d_j: Determinant, t: IntegralTable) -> float:
    """Slater-Condon value of <d_i|H|d_j>, including the core energy on the diagonal."""
    n = t.n_orb
    bra = d_i.spin_orbital_mask(n)
    ket = d_j.spin_orbital_mask(n)
    holes = ket & ~bra
    parts = bra & ~ket
    degree = _popcount(holes)
    if degree != _popcount(parts):
        raise ValueError("determinants have different particle numbers")
    if degree == 0:
        return _diagonal(t, _bits(ket))
    if degree == 1:
        return _single(t, ket, _bits(holes)[0], _bits(parts)[0])
    if degree == 2:
        i, j = _bits(holes)
        a, b = _bits(parts)
        return _double(t, ket, i, j, a, b)
    return 0.0


def _excitations(mask: int, n_so: int, n_orb: int) -> Iterator[int]:
    occ = _bits(mask)
    vir = [q for q in range(n_so) if not (mask >> q) & 1]
    for i in occ:
        for a in vir:
            if i // n_orb == a // n_orb:
                yield mask ^ (1 << i) ^ (1 << a)
    for x, i in enumerate(occ):
        for j in occ[x + 1:]:
            for y, a in enumerate(vir):
                for b in vir[y + 1:]:
                    # spin conservation: the spin multiset of holes must match particles
                    if (i // n_orb) + (j // n_orb) != (a // n_orb) + (b // n_orb):
                        continue
                    yield mask ^ (1 << i) ^ (1 << j) ^ (1 << a) ^ (1 << b)


def excited_determinants(det: Determinant, n_orb: int) -> list[Determinant]:
    """Every spin-conserving single and double excitation of ``det``."""
    mask = det.spin_orbital_mask(n_orb)
    return [Determinant.from_spin_orbital_mask(m, n_orb) for m in _excitations(mask, 2 * n_orb, n_orb)]


def connected_determinants(det: Determinant, t: IntegralTable) -> Iterator[tuple[Determinant, float]]:
    """Yield ``(D', <D'|H|D>)`` for every ``D' != D`` with a nonzero element."""
    for other in excited_determinants(det, t.n_orb):
        value = hamiltonian_element(other, det, t)
        if abs(value) > NUMERICAL_ZERO:
            yield other, value


def hamiltonian_matrix(space: list[Determinant], t: IntegralTable) -> np.ndarray:
    """Dense Hamiltonian over ``space`` assembled from single/double connections."""
    index = {d: k for k, d in enumerate(space)}
    H = np.zeros((len(space), len(space)))
    for k, d in enumerate(space):
        H[k, k] = hamiltonian_element(d, d, t)
        for other, value in connected_determinants(d, t):
            m = index.get(other)
            if m is not None:
                H[m, k] = value
    return H
