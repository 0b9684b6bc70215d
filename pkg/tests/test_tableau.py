import itertools
from collections import Counter

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowfn.circuitsim import Gate, circuit_unitary
from shadowfn.shadows.tableau import (
    CliffordTableau,
    amplitude_matrix,
    clifford_to_circuit,
    sample_clifford,
    stabilizer_amplitude,
)

from oracles import dense_clifford, pauli_matrix, row_matrix, same_up_to_phase, single_qubit_cliffords, symplectic_matrices

seeds = st.integers(0, 2**32 - 1)


def phase_match(A, B):
    k = np.argmax(np.abs(B))
    return A * (B.flat[k] / A.flat[k])


def test_identity_tableau():
    t = CliffordTableau.identity(3)
    assert t.is_symplectic()
    np.testing.assert_allclose(amplitude_matrix(t), np.eye(8), atol=1e-15)
    assert t.conjugate(0b101, 0b011, 1) == (0b101, 0b011, 1)


def test_hadamard_amplitudes():
    # U = H on one qubit: rows map X -> Z and Z -> X
    t = CliffordTableau(1, [0, 1], [1, 0], [0, 0])
    A = amplitude_matrix(t)
    np.testing.assert_allclose(np.abs(A), np.full((2, 2), 1 / np.sqrt(2)), atol=1e-15)
    H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    assert same_up_to_phase(A, H)


def test_tableau_validation():
    with pytest.raises(ValueError):
        CliffordTableau(2, [1, 2], [0, 0], [0, 0])
    with pytest.raises(ValueError):
        sample_clifford(0, np.random.default_rng(0))


def test_from_matrix_round_trip():
    S = symplectic_matrices(1)[3]
    t = CliffordTableau.from_matrix(S, [1, 0])
    np.testing.assert_array_equal(t.matrix, S)
    assert t == CliffordTableau.from_matrix(S, [1, 0])
    assert len({t, CliffordTableau.from_matrix(S, [1, 0])}) == 1


@settings(max_examples=40)
@given(seeds, st.integers(1, 5))
def test_sampled_tableau_is_consistent_with_dense_unitary(seed, n):
    t = sample_clifford(n, np.random.default_rng(seed))
    assert t.is_symplectic()
    U = dense_clifford(t)
    np.testing.assert_allclose(U.conj().T @ U, np.eye(1 << n), atol=1e-10)
    for k in range(2 * n):
        P = pauli_matrix(n, 1 << k if k < n else 0, 0 if k < n else 1 << (k - n))
        np.testing.assert_allclose(U @ P @ U.conj().T, row_matrix(t, k), atol=1e-10)


@settings(max_examples=40)
@given(seeds, st.integers(1, 4), st.integers(0, 255), st.integers(0, 255), st.integers(0, 3))
def test_conjugate_matches_dense(seed, n, x, z, e):
    mask = (1 << n) - 1
    x, z = x & mask, z & mask
    t = sample_clifford(n, np.random.default_rng(seed))
    U = dense_clifford(t)
    ox, oz, oe = t.conjugate(x, z, e)
    np.testing.assert_allclose(U @ pauli_matrix(n, x, z, e) @ U.conj().T, pauli_matrix(n, ox, oz, oe), atol=1e-10)


@settings(max_examples=60)
@given(seeds, st.integers(1, 5))
def test_amplitudes_match_dense(seed, n):
    t = sample_clifford(n, np.random.default_rng(seed))
    Ud = dense_clifford(t).conj().T
    A = amplitude_matrix(t)
    np.testing.assert_allclose(phase_match(A, Ud), Ud, atol=1e-12)


def test_amplitude_phase_is_canonical_and_consistent():
    t = sample_clifford(3, np.random.default_rng(11))
    A = amplitude_matrix(t)
    for x, b in [(0, 0), (5, 3), (7, 6)]:
        assert stabilizer_amplitude(t, b, x) == A[x, b]


@settings(max_examples=40)
@given(seeds, st.integers(1, 5))
def test_measurement_circuit_and_prefix(seed, n):
    t = sample_clifford(n, np.random.default_rng(seed))
    W, prefix = clifford_to_circuit(t)
    assert {g[0] for g in W.gates} <= {Gate.H, Gate.RZ, Gate.CZ}
    # U W^dag permutes basis states (with phases) exactly as the prefix map says
    M = dense_clifford(t) @ circuit_unitary(W).conj().T
    for bp in range(1 << n):
        assert abs(M[prefix(bp), bp]) == pytest.approx(1.0, abs=1e-10)


def test_one_qubit_sampler_uniform():
    rng = np.random.default_rng(0)
    reps = single_qubit_cliffords()
    assert len(reps) == 24
    n_draws = 24 * 400
    counts = Counter()
    for _ in range(n_draws):
        U = dense_clifford(sample_clifford(1, rng))
        counts[next(k for k, m in enumerate(reps) if same_up_to_phase(m, U))] += 1
    assert len(counts) == 24
    assert scipy.stats.chisquare([counts[k] for k in range(24)]).pvalue > 1e-3


def test_two_qubit_sampler_uniform():
    rng = np.random.default_rng(1)
    index = {S.tobytes(): k for k, S in enumerate(np.array(symplectic_matrices(2), dtype=np.uint8))}
    assert len(index) == 720
    n_draws = 720 * 40
    sym = Counter()
    phases = Counter()
    for _ in range(n_draws):
        t = sample_clifford(2, rng)
        sym[index[t.matrix.tobytes()]] += 1
        phases[tuple(t.r)] += 1
    assert len(sym) == 720
    assert scipy.stats.chisquare([sym[k] for k in range(720)]).pvalue > 1e-3
    assert scipy.stats.chisquare([phases[p] for p in itertools.product((0, 1), repeat=4)]).pvalue > 1e-3
