"""Statevector simulation with optional depolarizing trajectories.

Qubit ``q`` is bit ``q`` of the basis-state index (little endian). Two-qubit
gate matrices are written in the basis ``|x_a x_b>`` with the first listed
qubit as the more significant bit, which only matters for CNOT (control,
target). ``Circuit.global_phase`` is tracked so circuits that stand in for
fermionic operators reproduce them exactly, not just up to phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numba
import numpy as np

__all__ = [
    "Circuit",
    "Gate",
    "NoiseModel",
    "apply_circuit",
    "apply_depolarizing_trajectory",
    "circuit_unitary",
    "compile_native",
    "sample_measurement",
]


class Gate(IntEnum):
    RX = 0
    RZ = 1
    H = 2
    X = 3
    CZ = 4
    CPHASE = 5
    XY = 6
    CNOT = 7


TWO_QUBIT = {Gate.CZ, Gate.CPHASE, Gate.XY, Gate.CNOT}
NATIVE = {Gate.RX, Gate.RZ, Gate.CZ, Gate.CPHASE, Gate.XY}


@dataclass
class Circuit:
    n_qubits: int
    gates: list = field(default_factory=list)
    global_phase: float = 0.0

    def add(self, kind: Gate, qubits, angle: float = 0.0) -> "Circuit":
        kind = Gate(kind)
        qubits = tuple(int(q) for q in (qubits if np.iterable(qubits) else (qubits,)))
        width = 2 if kind in TWO_QUBIT else 1
        if len(qubits) != width:
            raise ValueError(f"{kind.name} acts on {width} qubit(s), got {qubits}")
        if any(not 0 <= q < self.n_qubits for q in qubits):
            raise ValueError(f"qubit index out of range in {kind.name}{qubits}")
        if width == 2 and qubits[0] == qubits[1]:
            raise ValueError(f"{kind.name} needs two distinct qubits")
        self.gates.append((kind, qubits, float(angle)))
        return self

    def extend(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit count mismatch")
        self.gates.extend(other.gates)
        self.global_phase += other.global_phase
        return self

    def __len__(self):
        return len(self.gates)

    def count(self, kind: Gate) -> int:
        return sum(1 for g in self.gates if g[0] == kind)

    def arrays(self):
        """Gate list as flat arrays for the compiled kernels."""
        m = len(self.gates)
        kinds = np.empty(m, dtype=np.int64)
        q0 = np.empty(m, dtype=np.int64)
        q1 = np.full(m, -1, dtype=np.int64)
        angles = np.empty(m, dtype=np.float64)
        for k, (kind, qubits, angle) in enumerate(self.gates):
            kinds[k] = int(kind)
            q0[k] = qubits[0]
            if len(qubits) == 2:
                q1[k] = qubits[1]
            angles[k] = angle
        return kinds, q0, q1, angles


@dataclass(frozen=True)
class NoiseModel:
    """Depolarizing rates: ``p/10`` after RX, ``p`` after two-qubit gates, none on RZ or readout."""

    p: float = 0.0

    def __post_init__(self):
        if not 0 <= self.p < 1:
            raise ValueError(f"error rate must lie in [0, 1), got {self.p}")

    @property
    def one_qubit_rate(self) -> float:
        return self.p / 10

    @property
    def two_qubit_rate(self) -> float:
        return self.p

    rz_noiseless = True
    measurement_noiseless = True


def compile_native(c: Circuit) -> Circuit:
    """Lower H, X and CNOT onto RX/RZ/CZ, keeping the unitary exact (phase tracked)."""
    out = Circuit(c.n_qubits, global_phase=c.global_phase)
    half = np.pi / 2

    def hadamard(q):
        # H = i RZ(pi/2) RX(pi/2) RZ(pi/2)
        out.add(Gate.RZ, q, half).add(Gate.RX, q, half).add(Gate.RZ, q, half)
        out.global_phase += half

    for kind, qubits, angle in c.gates:
        if kind == Gate.H:
            hadamard(qubits[0])
        elif kind == Gate.X:
            out.add(Gate.RX, qubits[0], np.pi)
            out.global_phase += half
        elif kind == Gate.CNOT:
            control, target = qubits
            hadamard(target)
            out.add(Gate.CZ, (control, target))
            hadamard(target)
        else:
            out.add(kind, qubits, angle)
    return out


@numba.njit(cache=True)
def _apply_1q(state, q, m00, m01, m10, m11):
    step = 1 << q
    n = state.shape[0]
    for base in range(0, n, 2 * step):
        for i in range(base, base + step):
            a = state[i]
            b = state[i + step]
            state[i] = m00 * a + m01 * b
            state[i + step] = m10 * a + m11 * b


@numba.njit(cache=True)
def _apply_gate(state, kind, qa, qb, theta):
    n = state.shape[0]
    if kind == 0:  # RX
        c = np.cos(theta / 2)
        s = np.sin(theta / 2)
        _apply_1q(state, qa, c + 0j, -1j * s, -1j * s, c + 0j)
    elif kind == 1:  # RZ
        _apply_1q(state, qa, np.exp(-0.5j * theta), 0j, 0j, np.exp(0.5j * theta))
    elif kind == 2:  # H
        r = 1 / np.sqrt(2.0)
        _apply_1q(state, qa, r + 0j, r + 0j, r + 0j, -r + 0j)
    elif kind == 3:  # X
        _apply_1q(state, qa, 0j, 1 + 0j, 1 + 0j, 0j)
    elif kind == 4 or kind == 5:  # CZ, CPHASE
        ph = -1 + 0j if kind == 4 else np.exp(1j * theta)
        mask = (1 << qa) | (1 << qb)
        for i in range(n):
            if i & mask == mask:
                state[i] *= ph
    elif kind == 6:  # XY
        c = np.cos(theta / 2)
        s = 1j * np.sin(theta / 2)
        ma = 1 << qa
        mb = 1 << qb
        for i in range(n):
            if (i & ma) and not (i & mb):
                j = i ^ ma ^ mb
                a = state[i]
                b = state[j]
                state[i] = c * a + s * b
                state[j] = s * a + c * b
    elif kind == 7:  # CNOT
        mc = 1 << qa
        mt = 1 << qb
        for i in range(n):
            if (i & mc) and not (i & mt):
                j = i | mt
                tmp = state[i]
                state[i] = state[j]
                state[j] = tmp


@numba.njit(cache=True)
def _apply_pauli(state, q, which):
    # which: 1 = X, 2 = Y, 3 = Z
    if which == 1:
        _apply_1q(state, q, 0j, 1 + 0j, 1 + 0j, 0j)
    elif which == 2:
        _apply_1q(state, q, 0j, -1j, 1j, 0j)
    elif which == 3:
        _apply_1q(state, q, 1 + 0j, 0j, 0j, -1 + 0j)


@numba.njit(cache=True)
def run_gates(state, kinds, q0, q1, angles):
    for k in range(kinds.shape[0]):
        _apply_gate(state, kinds[k], q0[k], q1[k], angles[k])


@numba.njit(cache=True)
def run_gates_noisy(state, kinds, q0, q1, angles, p1, p2, uniforms):
    """Apply gates, inserting random non-identity Paulis after noisy gates.

    ``p1``/``p2`` are the Pauli-insertion probabilities (already converted from
    channel rates); ``uniforms`` holds two draws per gate.
    """
    for k in range(kinds.shape[0]):
        kind = kinds[k]
        _apply_gate(state, kind, q0[k], q1[k], angles[k])
        u = uniforms[2 * k]
        v = uniforms[2 * k + 1]
        if kind == 0:
            if u < p1:
                _apply_pauli(state, q0[k], 1 + min(int(v * 3), 2))
        elif kind >= 4:
            if u < p2:
                w = 1 + min(int(v * 15), 14)
                _apply_pauli(state, q0[k], w // 4)
                _apply_pauli(state, q1[k], w % 4)


@numba.njit(cache=True)
def sample_index(state, u):
    acc = 0.0
    last = 0
    for i in range(state.shape[0]):
        p = state[i].real ** 2 + state[i].imag ** 2
        if p > 0:
            last = i
        acc += p
        if u < acc:
            return i
    return last


def pauli_insertion_probability(rate: float, width: int) -> float:
    """Probability of inserting a uniformly chosen non-identity Pauli.

    Averaging over insertions then gives exactly (1 - rate) rho + rate I / 2^width.
    """
    d2 = 4**width
    return rate * (d2 - 1) / d2


def _check_state(state, c: Circuit):
    state = np.asarray(state, dtype=np.complex128)
    if state.shape != (1 << c.n_qubits,):
        raise ValueError(f"state has length {state.shape[0]}, circuit needs {1 << c.n_qubits}")
    return state.copy()


def apply_circuit(state, c: Circuit) -> np.ndarray:
    out = _check_state(state, c)
    if c.gates:
        run_gates(out, *c.arrays())
    if c.global_phase:
        out *= np.exp(1j * c.global_phase)
    return out


def apply_depolarizing_trajectory(state, c: Circuit, nm: NoiseModel, rng) -> np.ndarray:
    """One quantum-jump trajectory of the natively compiled circuit under ``nm``."""
    out = _check_state(state, c)
    native = compile_native(c)
    arrays = native.arrays()
    uniforms = rng.random(2 * len(native))
    run_gates_noisy(
        out, *arrays,
        pauli_insertion_probability(nm.one_qubit_rate, 1),
        pauli_insertion_probability(nm.two_qubit_rate, 2),
        uniforms,
    )
    if native.global_phase:
        out *= np.exp(1j * native.global_phase)
    return out


def sample_measurement(state, rng) -> int:
    """One computational-basis shot; returns the outcome as an integer bitstring."""
    state = np.ascontiguousarray(state, dtype=np.complex128)
    return int(sample_index(state, rng.random() * np.vdot(state, state).real))


def circuit_unitary(c: Circuit) -> np.ndarray:
    dim = 1 << c.n_qubits
    U = np.empty((dim, dim), dtype=np.complex128)
    eye = np.eye(dim, dtype=np.complex128)
    for k in range(dim):
        U[:, k] = apply_circuit(eye[k], c)
    return U
