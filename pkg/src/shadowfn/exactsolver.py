"""Exact diagonalization of the bare and fixed-node Hamiltonians.

Everything here is deterministic linear algebra and serves as the reference
the stochastic code is checked against. The array-level functions
(:func:`fixed_node_matrix`, :func:`lowest_eigenpair`) work on any real
symmetric matrix, which is how the toy-model tests drive them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse.linalg as sla

from .chemio import (
    Determinant,
    IntegralTable,
    connected_determinants,
    determinant_space,
    hamiltonian_element,
    hamiltonian_matrix,
)

DENSE_LIMIT = 2000


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual norm {residual:.3e})")
        self.residual = residual


class NodeError(ValueError):
    """A determinant with (numerically) zero trial overlap was queried."""


@dataclass(frozen=True)
class FixedNodeSpec:
    gamma: float
    trial_overlaps: Mapping[Determinant, float]
    zero_tolerance: float = 1e-12

    def __post_init__(self):
        if self.gamma < -1:
            raise ValueError(f"gamma must be >= -1, got {self.gamma}")
        if self.zero_tolerance <= 0:
            raise ValueError("zero_tolerance must be positive")

    def overlap(self, det: Determinant) -> float:
        return float(self.trial_overlaps.get(det, 0.0))

    def is_node(self, det: Determinant) -> bool:
        return abs(self.overlap(det)) < self.zero_tolerance


@dataclass
class SpaceHamiltonian:
    """Dense Hamiltonian over an explicit, ordered determinant list."""

    dets: list
    H: np.ndarray
    index: dict = field(init=False)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        if self.H.shape != (len(self.dets), len(self.dets)):
            raise ValueError("matrix shape does not match determinant list")
        self.index = {d: k for k, d in enumerate(self.dets)}

    @classmethod
    def from_integrals(cls, t: IntegralTable, space=None) -> "SpaceHamiltonian":
        if space is None:
            space = determinant_space(t.n_orb, t.n_alpha, t.n_beta)
        space = list(space)
        return cls(space, hamiltonian_matrix(space, t))

    @classmethod
    def from_matrix(cls, H) -> "SpaceHamiltonian":
        """Toy model; basis states are labelled ``Determinant(k, 0)``."""
        H = np.asarray(H, dtype=float)
        return cls([Determinant(k, 0) for k in range(H.shape[0])], H)

    def __len__(self):
        return len(self.dets)

    def vector(self, amplitudes: Mapping, dtype=float) -> np.ndarray:
        v = np.zeros(len(self.dets), dtype=dtype)
        for d, a in amplitudes.items():
            k = self.index.get(d)
            if k is None:
                if a != 0:
                    raise KeyError(f"{d} is not in the space")
                continue
            v[k] = a
        return v

    def as_map(self, vector) -> dict:
        return {d: vector[k] for k, d in enumerate(self.dets)}


def _fix_sign(v: np.ndarray) -> np.ndarray:
    k = np.argmax(np.abs(v))
    return v * np.sign(v[k]) if v[k] != 0 else v


def lowest_eigenpair(H: np.ndarray, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    """Ground eigenpair of a real symmetric matrix, normalized, largest component positive."""
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n <= DENSE_LIMIT:
        w, v = np.linalg.eigh(H)
        return float(w[0]), _fix_sign(v[:, 0])
    try:
        w, v = sla.eigsh(H, k=1, which="SA", tol=tol, maxiter=20 * n)
    except sla.ArpackNoConvergence as exc:
        vec = exc.eigenvectors[:, 0] if exc.eigenvectors.size else np.ones(n) / np.sqrt(n)
        lam = vec @ H @ vec
        raise ConvergenceError("Lanczos did not converge", np.linalg.norm(H @ vec - lam * vec)) from None
    vec = v[:, 0]
    residual = np.linalg.norm(H @ vec - w[0] * vec)
    if residual > 1e-6 * max(1.0, abs(w[0])):
        raise ConvergenceError("Lanczos residual too large", residual)
    return float(w[0]), _fix_sign(vec)


def ground_state(space, t: IntegralTable) -> tuple[float, dict]:
    """Lowest eigenpair of H in ``space`` as ``(energy, {det: amplitude})``."""
    space = list(space)
    if not space:
        raise ValueError("empty determinant space")
    sh = SpaceHamiltonian.from_integrals(t, space)
    e, v = lowest_eigenpair(sh.H)
    return e, sh.as_map(v)


def s_ij(i: Determinant, j: Determinant, spec: FixedNodeSpec, t: IntegralTable) -> float:
    """Sign-violation indicator psi_i H_ij psi_j (zero when either overlap is a node)."""
    if spec.is_node(i) or spec.is_node(j):
        return 0.0
    return spec.overlap(i) * hamiltonian_element(i, j, t) * spec.overlap(j)


def fixed_node_element(i: Determinant, j: Determinant, spec: FixedNodeSpec, t: IntegralTable) -> float:
    if i != j:
        h = hamiltonian_element(i, j, t)
        s = s_ij(i, j, spec, t)
        return -spec.gamma * h if s > 0 else h
    if spec.is_node(i):
        raise NodeError(f"{i} has |psi_T| below {spec.zero_tolerance}; it is excluded from the fixed-node space")
    psi_i = spec.overlap(i)
    v_sf = 0.0
    for other, h in connected_determinants(i, t):
        if spec.is_node(other):
            continue
        psi_j = spec.overlap(other)
        if psi_i * h * psi_j > 0:
            v_sf += h * psi_j / psi_i
    return hamiltonian_element(i, i, t) + (1.0 + spec.gamma) * v_sf


def fixed_node_matrix(H: np.ndarray, psi: np.ndarray, gamma: float, zero_tolerance: float = 1e-12):
    """Assemble H^fn(gamma) on the determinants with non-negligible trial overlap.

    Returns ``(H_fn, keep)`` where ``keep`` is the boolean mask of retained
    basis states; ``H_fn`` is indexed by the retained states only.
    """
    if gamma < -1:
        raise ValueError(f"gamma must be >= -1, got {gamma}")
    H = np.asarray(H, dtype=float)
    psi = np.asarray(psi, dtype=float)
    keep = np.abs(psi) >= zero_tolerance
    Hk = H[np.ix_(keep, keep)]
    pk = psi[keep]
    s = pk[:, None] * Hk * pk[None, :]
    np.fill_diagonal(s, 0.0)
    violating = s > 0
    Hfn = np.where(violating, -gamma * Hk, Hk)
    v_sf = np.where(violating, Hk * pk[None, :], 0.0).sum(axis=1) / pk
    Hfn[np.diag_indices_from(Hfn)] = np.diag(Hk) + (1.0 + gamma) * v_sf
    return Hfn, keep


def fixed_node_energy_matrix(H, psi, gamma, zero_tolerance=1e-12) -> float:
    Hfn, keep = fixed_node_matrix(H, psi, gamma, zero_tolerance)
    if not keep.any():
        raise ValueError("no determinant survives the zero-overlap filter")
    return lowest_eigenpair(Hfn)[0]


def fixed_node_energy_exact(space, spec: FixedNodeSpec, t: IntegralTable) -> float:
    """Ground energy of H^fn(gamma) restricted to determinants with nonzero overlap."""
    sh = space if isinstance(space, SpaceHamiltonian) else SpaceHamiltonian.from_integrals(t, space)
    psi = np.array([spec.overlap(d) for d in sh.dets])
    return fixed_node_energy_matrix(sh.H, psi, spec.gamma, spec.zero_tolerance)


def variational_energy_matrix(H: np.ndarray, trial: np.ndarray) -> float:
    trial = np.asarray(trial)
    norm = np.vdot(trial, trial).real
    if norm == 0:
        raise ValueError("trial vector has zero norm")
    return float(np.vdot(trial, H @ trial).real / norm)


def variational_energy(trial: Mapping[Determinant, complex], t: IntegralTable) -> float:
    """<T|H|T>/<T|T> for a real or complex trial given as a determinant map."""
    dets = sorted(d for d, a in trial.items() if a != 0)
    if not dets:
        raise ValueError("trial vector has zero norm")
    sh = SpaceHamiltonian.from_integrals(t, dets)
    return variational_energy_matrix(sh.H, np.array([trial[d] for d in dets]))


def gamma_curve(H, psi, gammas, zero_tolerance=1e-12) -> np.ndarray:
    return np.array([fixed_node_energy_matrix(H, psi, g, zero_tolerance) for g in gammas])
