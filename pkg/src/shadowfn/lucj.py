"""Single-layer local unitary cluster Jastrow (LUCJ) trial states.

The state is ``exp(K) exp(iJ) exp(-K) |D0>`` with a spin-independent orbital
rotation generator ``K`` (anti-Hermitian) and a Jastrow factor restricted to
the couplings available on a 2 x n_orb square qubit lattice: neighbouring
orbitals within a spin row, and the alpha/beta pair of the same orbital.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .chemio import Determinant, IntegralTable, JordanWignerMap, determinant_space
from .circuitsim import Circuit, Gate, apply_circuit
from .exactsolver import SpaceHamiltonian, variational_energy_matrix

log = logging.getLogger(__name__)

__all__ = [
    "LocalityError",
    "LucjFit",
    "LucjParams",
    "TrialState",
    "align_and_project",
    "build_lucj_circuit",
    "build_tau_circuit",
    "exact_overlaps",
    "givens_decomposition",
    "largest_overlap_determinant",
    "optimize_lucj",
    "optimize_lucj_multistart",
]


class LocalityError(ValueError):
    """Jastrow coupling between qubits that are not lattice neighbours."""


def lattice_edges(n_orb: int):
    """Edges of the 2 x n_orb grid as (orbital, orbital, kind) with kind 'same' or 'opposite'."""
    horizontal = [(p, p + 1, "same") for p in range(n_orb - 1)]
    vertical = [(p, p, "opposite") for p in range(n_orb)]
    return horizontal + vertical


@dataclass
class LucjParams:
    K: np.ndarray
    J_same: np.ndarray
    J_opposite: np.ndarray
    reference: Determinant

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=complex)
        self.J_same = np.asarray(self.J_same, dtype=float)
        self.J_opposite = np.asarray(self.J_opposite, dtype=float)
        n = self.K.shape[0]
        if self.K.shape != (n, n) or self.J_same.shape != (n, n) or self.J_opposite.shape != (n,):
            raise ValueError("inconsistent parameter shapes")
        if not np.allclose(self.K, -self.K.conj().T, atol=1e-12):
            raise ValueError("K must be anti-Hermitian")
        if not np.allclose(self.J_same, self.J_same.T, atol=1e-12):
            raise ValueError("J_same must be symmetric")

    @property
    def n_orb(self) -> int:
        return self.K.shape[0]

    def check_locality(self) -> None:
        n = self.n_orb
        far = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) > 1
        if np.any(self.J_same[far] != 0):
            p, q = np.argwhere(far & (self.J_same != 0))[0]
            raise LocalityError(f"J_same couples non-adjacent orbitals {p} and {q}")

    @classmethod
    def zeros(cls, n_orb: int, reference: Determinant) -> "LucjParams":
        return cls(np.zeros((n_orb, n_orb)), np.zeros((n_orb, n_orb)), np.zeros(n_orb), reference)

    @staticmethod
    def n_free(n_orb: int) -> int:
        return n_orb * (n_orb - 1) + n_orb + (n_orb - 1) + n_orb

    def to_vector(self) -> np.ndarray:
        n = self.n_orb
        low = np.tril_indices(n, -1)
        k = self.K[low]
        return np.concatenate([
            k.real, k.imag,
            np.diag(self.J_same), np.diag(self.J_same, 1), self.J_opposite,
        ])

    @classmethod
    def from_vector(cls, x, n_orb: int, reference: Determinant) -> "LucjParams":
        x = np.asarray(x, dtype=float)
        if x.shape != (cls.n_free(n_orb),):
            raise ValueError(f"expected {cls.n_free(n_orb)} parameters, got {x.shape}")
        m = n_orb * (n_orb - 1) // 2
        low = np.tril_indices(n_orb, -1)
        K = np.zeros((n_orb, n_orb), dtype=complex)
        K[low] = x[:m] + 1j * x[m:2 * m]
        K = K - K.conj().T
        pos = 2 * m
        J = np.diag(x[pos:pos + n_orb])
        pos += n_orb
        off = x[pos:pos + n_orb - 1]
        J = J + np.diag(off, 1) + np.diag(off, -1)
        pos += n_orb - 1
        return cls(K, J, x[pos:pos + n_orb].copy(), reference)

    def to_dict(self) -> dict:
        pair = lambda z: [float(z.real), float(z.imag)]  # noqa: E731
        return {
            "n_orb": self.n_orb,
            "reference": {"alpha": self.reference.alpha, "beta": self.reference.beta},
            "K": [[pair(z) for z in row] for row in self.K],
            "J_same": self.J_same.tolist(),
            "J_opposite": self.J_opposite.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LucjParams":
        K = np.array([[complex(re, im) for re, im in row] for row in d["K"]])
        ref = Determinant(int(d["reference"]["alpha"]), int(d["reference"]["beta"]))
        return cls(K, np.array(d["J_same"], dtype=float), np.array(d["J_opposite"], dtype=float), ref)

    def save(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_dict(), **extra}, indent=2))

    @classmethod
    def load(cls, path) -> "LucjParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrialState:
    overlaps: dict
    theta0: float
    source: str = "exact"
    alignment: Determinant | None = None


# ----------------------------------------------------------------------------
# Givens decomposition of orbital rotations


def _givens2(theta, beta):
    """Single-particle action of the Givens gate on modes (m, m+1)."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s * np.exp(1j * beta)], [-1j * s * np.exp(-1j * beta), c]])


def _embed(n, m, block):
    G = np.eye(n, dtype=complex)
    G[m:m + 2, m:m + 2] = block
    return G


def _null_angles(x, y, eps=1e-15):
    """(theta, beta) with x cos(theta/2) = i sin(theta/2) exp(-i beta) y."""
    if abs(y) < eps:
        return (0.0, 0.0) if abs(x) < eps else (np.pi, 0.0)
    rho = x / y
    if abs(rho) < eps:
        return 0.0, 0.0
    return 2 * np.arctan(abs(rho)), -np.angle(-1j * rho)


def _split_phase(X, eps=1e-14):
    """Write a 2x2 unitary as diag(d1, d2) @ givens2(theta, beta)."""
    c = abs(X[0, 0])
    if c > eps:
        d1, d2 = X[0, 0] / c, X[1, 1] / c
        w = 1j * X[0, 1] / d1
        s = abs(w)
        beta = float(np.angle(w)) if s > eps else 0.0
        return d1, d2, 2 * np.arctan2(s, c), beta
    return 1j * X[0, 1], 1j * X[1, 0], np.pi, 0.0


def givens_decomposition(V: np.ndarray):
    """Rectangular (brick-pattern) decomposition of a unitary into nearest-neighbour Givens rotations.

    Returns ``(rotations, phases)`` with ``rotations`` a time-ordered list of
    ``(m, theta, beta)`` acting on modes ``(m, m+1)``, such that
    ``V = diag(exp(1j*phases)) @ G_last @ ... @ G_first``.
    """
    V = np.array(V, dtype=complex)
    n = V.shape[0]
    right, left = [], []
    for i in range(1, n):
        if i % 2:
            for j in range(i):
                r, c = n - 1 - j, i - j - 1
                theta, beta = _null_angles(V[r, c], V[r, c + 1])
                V = V @ _embed(n, c, _givens2(theta, beta))
                right.append((c, theta, beta))
        else:
            for j in range(1, i + 1):
                r, c = n + j - i - 1, j - 1
                theta, beta = _null_angles(V[r, c], V[r - 1, c])
                V = _embed(n, r - 1, _givens2(theta, beta)) @ V
                left.append((r - 1, theta, beta))
    off = V - np.diag(np.diag(V))
    if np.abs(off).max(initial=0.0) > 1e-9:
        raise RuntimeError("Givens nulling left off-diagonal residue; input is not unitary?")
    d = np.diag(V).copy()
    pushed = []
    for m, theta, beta in reversed(left):
        X = _givens2(-theta, beta) @ np.diag(d[m:m + 2])
        d1, d2, t2, b2 = _split_phase(X)
        d[m], d[m + 1] = d1, d2
        pushed.append((m, t2, b2))
    # V = D @ pushed[-1] @ ... @ pushed[0] @ R_m^-1 @ ... @ R_1^-1
    rotations = [(m, -theta, beta) for m, theta, beta in right] + pushed
    return rotations, np.angle(d)


def orbital_rotation_circuit(V: np.ndarray, jw: JordanWignerMap) -> Circuit:
    """Circuit applying the Fock-space rotation a_q^+ -> sum_p V[p, q] a_p^+ to both spin rows."""
    rotations, phases = givens_decomposition(V)
    c = Circuit(jw.n_qubits)
    for m, theta, beta in rotations:
        for spin in (0, 1):
            a, b = jw.qubit(m, spin), jw.qubit(m + 1, spin)
            c.add(Gate.RZ, b, beta).add(Gate.XY, (a, b), -theta).add(Gate.RZ, b, -beta)
    for m, phi in enumerate(phases):
        for spin in (0, 1):
            c.add(Gate.RZ, jw.qubit(m, spin), phi)
            c.global_phase += phi / 2
    return c


def jastrow_circuit(p: LucjParams, jw: JordanWignerMap) -> Circuit:
    p.check_locality()
    c = Circuit(jw.n_qubits)
    n = p.n_orb
    for q in range(n):
        for spin in (0, 1):
            if p.J_same[q, q]:
                c.add(Gate.RZ, jw.qubit(q, spin), p.J_same[q, q])
                c.global_phase += p.J_same[q, q] / 2
    for q, r, kind in lattice_edges(n):
        if kind == "same":
            if p.J_same[q, r]:
                for spin in (0, 1):
                    c.add(Gate.CPHASE, (jw.qubit(q, spin), jw.qubit(r, spin)), 2 * p.J_same[q, r])
        elif p.J_opposite[q]:
            c.add(Gate.CPHASE, (jw.qubit(q, 0), jw.qubit(q, 1)), 2 * p.J_opposite[q])
    return c


def lucj_unitary_circuit(p: LucjParams, jw: JordanWignerMap | None = None) -> Circuit:
    """Gates for exp(K) exp(iJ) exp(-K) without state preparation."""
    jw = jw or JordanWignerMap(p.n_orb)
    c = Circuit(jw.n_qubits)
    c.extend(orbital_rotation_circuit(scipy.linalg.expm(-p.K), jw))
    c.extend(jastrow_circuit(p, jw))
    c.extend(orbital_rotation_circuit(scipy.linalg.expm(p.K), jw))
    return c


def build_lucj_circuit(p: LucjParams, jw: JordanWignerMap | None = None) -> Circuit:
    jw = jw or JordanWignerMap(p.n_orb)
    p.check_locality()
    c = Circuit(jw.n_qubits)
    for q in range(jw.n_qubits):
        if (jw.basis_index(p.reference) >> q) & 1:
            c.add(Gate.X, q)
    return c.extend(lucj_unitary_circuit(p, jw))


def build_tau_circuit(p: LucjParams, jw: JordanWignerMap | None = None) -> Circuit:
    """Prepare (|0> + |Psi_LUCJ>)/sqrt(2) via an H + CNOT fan-out onto the reference."""
    jw = jw or JordanWignerMap(p.n_orb)
    p.check_locality()
    c = Circuit(jw.n_qubits)
    alpha, beta = p.reference.alpha_occ, p.reference.beta_occ
    if alpha:
        root = jw.qubit(alpha[0], 0)
    elif beta:
        root = jw.qubit(beta[0], 1)
    else:
        raise ValueError("reference determinant is empty")
    c.add(Gate.H, root)
    # vertical link first, then fan out along each row
    if alpha and beta:
        c.add(Gate.CNOT, (root, jw.qubit(beta[0], 1)))
    for occ, spin in ((alpha, 0), (beta, 1)):
        prev = None
        for q in occ:
            qubit = jw.qubit(q, spin)
            if prev is not None:
                c.add(Gate.CNOT, (prev, qubit))
            prev = qubit
    return c.extend(lucj_unitary_circuit(p, jw))


def exact_overlaps(p: LucjParams) -> dict:
    """<D|Psi_LUCJ> for every determinant with the reference's particle numbers, by statevector."""
    jw = JordanWignerMap(p.n_orb)
    state = np.zeros(1 << jw.n_qubits, dtype=complex)
    state[0] = 1.0
    state = apply_circuit(state, build_lucj_circuit(p, jw))
    space = determinant_space(p.n_orb, p.reference.n_alpha, p.reference.n_beta)
    return {d: complex(state[jw.basis_index(d)]) for d in space}


# ----------------------------------------------------------------------------
# determinant-space evaluation used inside the optimizer


class _FockEvaluator:
    """Evaluates LUCJ amplitudes with orbital rotations applied through minors."""

    def __init__(self, n_orb: int, reference: Determinant, space: list[Determinant]):
        self.n = n_orb
        self.reference = reference
        self.a_strings = [tuple(c) for c in itertools.combinations(range(n_orb), reference.n_alpha)]
        self.b_strings = [tuple(c) for c in itertools.combinations(range(n_orb), reference.n_beta)]
        a_mask = {sum(1 << q for q in s): k for k, s in enumerate(self.a_strings)}
        b_mask = {sum(1 << q for q in s): k for k, s in enumerate(self.b_strings)}
        self.rows = np.array([a_mask[d.alpha] for d in space])
        self.cols = np.array([b_mask[d.beta] for d in space])
        self.ref_a = a_mask[reference.alpha]
        self.ref_b = b_mask[reference.beta]
        occ = lambda strings: np.array([[int(q in s) for q in range(n_orb)] for s in strings], dtype=float)  # noqa: E731
        self.na = occ(self.a_strings)
        self.nb = occ(self.b_strings)

    @staticmethod
    def _minors(U, strings):
        if not strings[0]:
            return np.ones((1, 1), dtype=complex)
        idx = np.array(strings)
        sub = U[idx[:, None, :, None], idx[None, :, None, :]]
        return np.linalg.det(sub)

    def amplitudes(self, p: LucjParams) -> np.ndarray:
        Um = scipy.linalg.expm(-p.K)
        Up = scipy.linalg.expm(p.K)
        Ma, Mb = self._minors(Um, self.a_strings), self._minors(Um, self.b_strings)
        psi = np.outer(Ma[:, self.ref_a], Mb[:, self.ref_b])
        J = p.J_same
        diag = np.diag(J)
        upper = np.triu(J, 1)
        phase_a = self.na @ diag + np.einsum("ip,pq,iq->i", self.na, 2 * upper, self.na)
        phase_b = self.nb @ diag + np.einsum("ip,pq,iq->i", self.nb, 2 * upper, self.nb)
        phase_ab = np.einsum("ip,p,jp->ij", self.na, 2 * p.J_opposite, self.nb)
        psi = psi * np.exp(1j * (phase_a[:, None] + phase_b[None, :] + phase_ab))
        Pa, Pb = self._minors(Up, self.a_strings), self._minors(Up, self.b_strings)
        psi = Pa @ psi @ Pb.T
        return psi[self.rows, self.cols]


@dataclass
class LucjFit:
    params: LucjParams
    energy: float
    converged: bool
    energies: list = field(default_factory=list)
    n_evaluations: int = 0


def _objective(t: IntegralTable, reference: Determinant):
    sh = SpaceHamiltonian.from_integrals(t)
    ev = _FockEvaluator(t.n_orb, reference, sh.dets)
    counter = {"n": 0}

    def energy(x):
        counter["n"] += 1
        p = LucjParams.from_vector(x, t.n_orb, reference)
        return variational_energy_matrix(sh.H, ev.amplitudes(p))

    return energy, sh, ev, counter


def lucj_state_vector(p: LucjParams, sh: SpaceHamiltonian) -> np.ndarray:
    return _FockEvaluator(p.n_orb, p.reference, sh.dets).amplitudes(p)


def optimize_lucj(t: IntegralTable, init: LucjParams, budget: int = 2000,
                  fd_step: float = 1e-5, gtol: float = 1e-7) -> LucjFit:
    """BFGS on the free real parameters with central finite-difference gradients.

    ``budget`` caps the number of BFGS iterations; exhausting it returns the
    best point found with ``converged=False``.
    """
    init.check_locality()
    energy, _, _, counter = _objective(t, init.reference)

    def grad(x):
        g = np.empty_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = fd_step
            g[k] = (energy(x + e) - energy(x - e)) / (2 * fd_step)
        return g

    x0 = init.to_vector()
    history = [energy(x0)]
    res = scipy.optimize.minimize(
        energy, x0, jac=grad, method="BFGS",
        callback=lambda xk: history.append(energy(xk)),
        options={"maxiter": budget, "gtol": gtol},
    )
    x = res.x if res.fun <= history[0] else x0
    e = min(res.fun, history[0])
    converged = bool(res.success) or res.status == 2  # status 2: precision loss at a converged point
    if res.nit >= budget:
        converged = False
    return LucjFit(LucjParams.from_vector(x, t.n_orb, init.reference), float(e), converged,
                   history, counter["n"])


def optimize_lucj_multistart(t: IntegralTable, reference: Determinant | None = None,
                             n_starts: int = 8, scale: float = 0.1, seed: int = 0,
                             budget: int = 2000) -> LucjFit:
    """Best of ``n_starts`` BFGS runs from Gaussian random initial parameters."""
    if reference is None:
        reference = Determinant((1 << t.n_alpha) - 1, (1 << t.n_beta) - 1)
    rng = np.random.default_rng(seed)
    best = None
    for k in range(n_starts):
        x0 = scale * rng.standard_normal(LucjParams.n_free(t.n_orb))
        fit = optimize_lucj(t, LucjParams.from_vector(x0, t.n_orb, reference), budget=budget)
        log.info("start %d: E = %.8f (converged=%s)", k, fit.energy, fit.converged)
        if best is None or fit.energy < best.energy:
            best = fit
    return best


# ----------------------------------------------------------------------------
# real trial state


class AlignmentError(ValueError):
    pass


def align_and_project(raw_overlaps: dict, d0: Determinant, source: str = "exact") -> TrialState:
    """Rotate the global phase so <d0|Psi> is real positive, then keep the real part."""
    z0 = complex(raw_overlaps.get(d0, 0.0))
    if abs(z0) == 0:
        raise AlignmentError(
            f"overlap with alignment determinant {d0} vanishes; choose a reference with a large overlap")
    theta0 = float(np.angle(z0))
    rot = np.exp(-1j * theta0)
    overlaps = {d: float((complex(z) * rot).real) for d, z in raw_overlaps.items()}
    overlaps[d0] = abs(z0)
    return TrialState(overlaps, theta0, source, d0)


def largest_overlap_determinant(raw_overlaps: dict) -> Determinant:
    """Determinant with the largest |overlap|; ties go to the canonically smallest."""
    return min(raw_overlaps, key=lambda d: (-round(abs(raw_overlaps[d]), 12), d))
