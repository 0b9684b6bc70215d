import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowfn.chemio import Determinant, IntegralTable
from shadowfn.exactsolver import (
    NodeError,
    SpaceHamiltonian,
    fixed_node_energy_matrix,
    fixed_node_matrix,
    gamma_curve,
    lowest_eigenpair,
    variational_energy_matrix,
)
from shadowfn.fciqmc import (
    FixedNodeSystem,
    PopulationExplosion,
    QmcConfig,
    SignProblemError,
    WalkerPopulation,
    extrapolate_gamma,
    initialize_vmc,
    local_energy,
    mixed_energy,
    propagate_step,
    run,
    run_partial_node,
    stable_dtau,
)

from conftest import random_toy
from oracles import random_integrals

SHORT = dict(equilibration_iters=1000, measurement_iters=10_000, n_vmc_samples=2000, vmc_burn_in=100)


def toy_system(H, psi, gamma=0.0):
    return FixedNodeSystem.build(SpaceHamiltonian.from_matrix(H), psi, gamma)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def dense_tilde(system):
    """Rebuild the importance-sampled matrix from its column storage."""
    n = len(system)
    M = np.diag(system.diag)
    for j in range(n):
        for p in range(system.indptr[j], system.indptr[j + 1]):
            M[system.targets[p], j] = system.values[p]
    return M


# --- configuration


def test_config_defaults_and_validation():
    cfg = QmcConfig(seed=1)
    assert (cfg.dtau, cfg.gamma, cfg.shift_damping) == (0.005, 0.0, 0.05)
    assert (cfg.equilibration_iters, cfg.measurement_iters) == (5000, 50_000)
    assert cfg.replace(gamma=0.1).gamma == 0.1 and cfg.gamma == 0.0
    for bad in (dict(dtau=0), dict(target_population=-1), dict(gamma=-1.5), dict(measurement_iters=1),
                dict(annihilation_floor=0), dict(population_cap=1)):
        with pytest.raises(ValueError):
            QmcConfig(seed=1, **bad)
    with pytest.raises(TypeError):
        QmcConfig(1)


# --- local energy


def small_table(seed):
    h, eri = random_integrals(3, np.random.default_rng(seed))
    return IntegralTable(3, 3, 1, 0.2, h, eri)


def test_local_energy_is_constant_for_exact_trial(h4, h4_space, h4_fci):
    e, v = h4_fci
    oracle = h4_space.as_map(v).get
    for d in h4_space.dets:
        if abs(oracle(d)) > 1e-6:
            assert local_energy(d, oracle, h4) == pytest.approx(e, abs=1e-9)


def test_local_energy_single_determinant_space():
    t = IntegralTable(1, 2, 0, 0.3, np.array([[-1.1]]), np.full((1, 1, 1, 1), 0.6))
    d = Determinant(1, 1)
    assert local_energy(d, {d: 0.7}.get, t) == pytest.approx(0.3 - 2.2 + 0.6)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_weighted_local_energy_is_variational_energy(seed):
    t = small_table(seed)
    sh = SpaceHamiltonian.from_integrals(t)
    psi = np.random.default_rng(seed).normal(size=len(sh))
    oracle = sh.as_map(psi).get
    el = np.array([local_energy(d, oracle, t) for d in sh.dets])
    np.testing.assert_allclose(el, (sh.H @ psi) / psi, atol=1e-10)
    assert (psi**2 @ el) / (psi**2).sum() == pytest.approx(variational_energy_matrix(sh.H, psi), abs=1e-10)


def test_local_energy_at_node_raises():
    t = small_table(0)
    d = SpaceHamiltonian.from_integrals(t).dets[0]
    with pytest.raises(NodeError):
        local_energy(d, lambda _: 0.0, t)


# --- system assembly


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), st.integers(3, 20), st.sampled_from([0.0, 0.1, 0.5, -0.5, -1.0]))
def test_importance_sampled_matrix_is_a_similarity_transform(seed, n, gamma):
    H, psi = random_toy(np.random.default_rng(seed), n)
    system = toy_system(H, psi, gamma)
    Hfn, keep = fixed_node_matrix(H, psi, gamma)
    pk = psi[keep]
    np.testing.assert_allclose(dense_tilde(system), pk[:, None] * Hfn / pk[None, :], atol=1e-12)
    np.testing.assert_allclose(system.local, (H[keep] @ psi) / pk, atol=1e-10)
    if gamma >= 0:
        assert system.sign_free


def test_overlap_forms_agree():
    H, psi = random_toy(np.random.default_rng(3), 8)
    sh = SpaceHamiltonian.from_matrix(H)
    a = FixedNodeSystem.build(sh, psi, 0.0)
    b = FixedNodeSystem.build(sh, sh.as_map(psi), 0.0)
    c = FixedNodeSystem.build(sh, sh.as_map(psi).get, 0.0)
    for other in (b, c):
        np.testing.assert_array_equal(a.values, other.values)
        np.testing.assert_array_equal(a.local, other.local)
    with pytest.raises(ValueError):
        FixedNodeSystem.build(sh, psi[:-1], 0.0)
    with pytest.raises(ValueError):
        FixedNodeSystem.build(sh, np.zeros(8), 0.0)


def test_nodes_are_excluded():
    H, psi = random_toy(np.random.default_rng(4), 8)
    psi[[2, 5]] = 1e-15
    system = toy_system(H, psi)
    assert len(system) == 6 and system.dropped == 2
    assert Determinant(2, 0) not in system.dets


# --- single steps


def test_one_determinant_decays_deterministically():
    system = toy_system(np.array([[2.0]]), np.array([0.8]))
    assert system.indptr.tolist() == [0, 0]
    cfg = QmcConfig(seed=0, dtau=0.01, target_population=10.0)
    pop = WalkerPopulation(np.array([10.0]), shift=0.5)
    r = rng()
    for _ in range(5):
        new, wrong = propagate_step(pop, system, cfg, r)
        assert wrong == 0
        assert new.amplitudes[0] == pytest.approx(pop.amplitudes[0] * (1 - 0.01 * (2.0 - pop.shift)), rel=1e-14)
        assert new.shift == pytest.approx(pop.shift - 5.0 * np.log(new.amplitudes[0] / 10.0), rel=1e-14)
        assert new.iteration == pop.iteration + 1
        pop = new


def test_mixed_energy_single_determinant_and_empty():
    H, psi = random_toy(np.random.default_rng(5), 6)
    system = toy_system(H, psi)
    f = np.zeros(6)
    f[3] = 2.5
    assert mixed_energy(WalkerPopulation(f, 0.0), system) == pytest.approx(system.local[3])
    assert np.isnan(mixed_energy(WalkerPopulation(np.zeros(6), 0.0), system))


def test_two_state_stationary_ratio():
    H = np.array([[0.0, -0.6], [-0.6, 0.8]])
    psi = np.array([1.0, 0.5])
    system = toy_system(H, psi)
    _, phi = lowest_eigenpair(H)
    cfg = QmcConfig(seed=3, dtau=0.01, target_population=200.0)
    r = rng(3)
    pop = initialize_vmc(system, cfg, r)
    ratios = []
    for it in range(40_000):
        pop, _ = propagate_step(pop, system, cfg, r)
        if it >= 2000:
            ratios.append(pop.amplitudes.copy())
    f = np.array(ratios)
    blocks = f.reshape(38, -1, 2).mean(axis=1)
    ratio = blocks[:, 1] / blocks[:, 0]
    expect = (psi[1] * phi[1]) / (psi[0] * phi[0])
    assert abs(ratio.mean() - expect) < 4 * ratio.std(ddof=1) / np.sqrt(len(ratio)) + 1e-3


@pytest.mark.parametrize("gamma", [0.0, 0.1])
def test_no_sign_violating_spawns_for_nonnegative_gamma(gamma):
    H, psi = random_toy(np.random.default_rng(6), 10)
    system = toy_system(H, psi, gamma)
    cfg = QmcConfig(seed=6, gamma=gamma, target_population=50.0, equilibration_iters=0, measurement_iters=100_000,
                    n_vmc_samples=500, vmc_burn_in=50)
    res = run(cfg, system)
    assert res.negative_spawns == 0
    assert np.all(res.trace.population > 0)


# --- VMC


def test_vmc_frequencies_follow_trial_weight(h4_space, h4_fci):
    _, v = h4_fci
    system = FixedNodeSystem.build(h4_space, v, 0.0)
    n, chains = 20_000, 20
    freqs = []
    for seed in range(chains):
        cfg = QmcConfig(seed=seed, n_vmc_samples=n, target_population=float(n), vmc_burn_in=1000)
        counts = initialize_vmc(system, cfg, rng(seed)).amplitudes
        assert counts.sum() == pytest.approx(n) and np.all(counts >= 0)
        freqs.append(counts / n)
    freqs = np.array(freqs)
    p = system.psi**2 / (system.psi**2).sum()
    # Metropolis draws are serially correlated, so the width comes from independent chains
    sigma = freqs.std(axis=0, ddof=1) / np.sqrt(chains)
    assert np.all(np.abs(freqs.mean(axis=0) - p) < 3 * sigma + 1e-12)


def test_vmc_single_determinant_trial(h4_space):
    d0 = h4_space.dets[5]
    system = FixedNodeSystem.build(h4_space, {d0: 0.9}, 0.0)
    pop = initialize_vmc(system, QmcConfig(seed=0, n_vmc_samples=100, vmc_burn_in=10), rng())
    assert system.dets == [d0]
    assert pop.as_map(system) == {d0: pytest.approx(1000.0)}


def test_iteration_zero_estimates_trial_variational_energy(h4_space, h4_trial):
    psi = h4_space.vector(h4_trial.overlaps)
    system = FixedNodeSystem.build(h4_space, psi, 0.0)
    cfg = QmcConfig(seed=4, n_vmc_samples=100_000)
    pop = initialize_vmc(system, cfg, rng(4))
    assert pop.shift == pytest.approx(mixed_energy(pop, system))
    assert mixed_energy(pop, system) == pytest.approx(variational_energy_matrix(h4_space.H, psi), abs=1e-3)


# --- full runs


def test_exact_trial_has_zero_variance(h4_space, h4_fci):
    e, v = h4_fci
    system = FixedNodeSystem.build(h4_space, v, 0.0)
    res = run(QmcConfig(seed=1, **SHORT), system)
    assert np.ptp(res.series.energy) < 1e-8
    assert res.mean == pytest.approx(e, abs=1e-8)
    assert res.stderr < 1e-8
    assert len(res.series) == SHORT["measurement_iters"]
    assert res.series.start_iteration == SHORT["equilibration_iters"] + 1


@pytest.mark.parametrize("seed,n,gamma", [(11, 8, 0.0), (12, 15, 0.1), (13, 25, 0.5)])
def test_toy_runs_match_exact_fixed_node(seed, n, gamma):
    H, psi = random_toy(np.random.default_rng(seed), n)
    system = toy_system(H, psi, gamma)
    res = run(QmcConfig(seed=seed, gamma=gamma, equilibration_iters=2000, measurement_iters=20_000), system)
    assert abs(res.mean - fixed_node_energy_matrix(H, psi, gamma)) < 3 * res.stderr


def test_runs_are_reproducible(tmp_path):
    H, psi = random_toy(np.random.default_rng(7), 12)
    system = toy_system(H, psi)
    cfg = QmcConfig(seed=9, **SHORT)
    a, b = run(cfg, system), run(cfg, system)
    for name in ("energy", "population", "shift"):
        np.testing.assert_array_equal(getattr(a.trace, name), getattr(b.trace, name))
    c = run(cfg.replace(seed=10), system)
    assert not np.array_equal(a.trace.energy, c.trace.energy)
    a.write(tmp_path / "run_g0.1")
    summary = json.loads((tmp_path / "run_g0.1.json").read_text())
    assert summary["mean"] == a.mean and summary["config"]["seed"] == 9
    assert summary["initial_energy"] == a.trace.energy[0]
    lines = (tmp_path / "run_g0.1.csv").read_text().splitlines()
    assert lines[0] == "iteration,energy,population,shift"
    assert len(lines) == 1 + SHORT["equilibration_iters"] + SHORT["measurement_iters"] + 1


def test_run_guards():
    H, psi = random_toy(np.random.default_rng(8), 10)
    system = toy_system(H, psi, -0.5)
    if not system.sign_free:
        with pytest.raises(ValueError, match="sign-free"):
            run(QmcConfig(seed=0, gamma=-0.5, **SHORT), system, allow_sign_problem=False)
    with pytest.raises(ValueError, match="gamma"):
        run(QmcConfig(seed=0, gamma=0.1, **SHORT), toy_system(H, psi, 0.0))
    with pytest.raises(ValueError):
        run_partial_node(QmcConfig(seed=0, gamma=0.0, **SHORT), toy_system(H, psi, 0.0))


def test_death_factor_guard_and_population_bounds():
    system = toy_system(np.array([[2.0]]), np.array([1.0]))
    cfg = QmcConfig(seed=0, dtau=0.1, target_population=10.0, population_cap=2.0)
    with pytest.raises(ValueError, match="dtau"):
        propagate_step(WalkerPopulation(np.array([10.0]), shift=-20.0), system, cfg, rng())
    with pytest.raises(PopulationExplosion, match="exceeds"):
        propagate_step(WalkerPopulation(np.array([10.0]), shift=30.0), system, cfg, rng())
    with pytest.raises(PopulationExplosion, match="died"):
        propagate_step(WalkerPopulation(np.array([1e-12]), shift=2.0), system, cfg, rng())


def test_stable_dtau():
    H, psi = random_toy(np.random.default_rng(9), 10)
    system = toy_system(H, psi)
    shift = float(system.diag.min())
    span = system.diag.max() - shift
    big = QmcConfig(seed=0, dtau=1.0 / span)
    assert stable_dtau(system, big, shift) == pytest.approx(0.5 / span)
    assert stable_dtau(system, big.replace(auto_dtau=False), shift) == big.dtau
    small = QmcConfig(seed=0, dtau=0.1 / span)
    assert stable_dtau(system, small, shift) == small.dtau
    res = run(big.replace(**SHORT), system)
    assert res.extra["requested_dtau"] == big.dtau and res.config.dtau < big.dtau


# --- partial node and extrapolation


def test_partial_node_two_state():
    H = np.array([[0.0, 0.5], [0.5, 0.7]])
    psi = np.array([1.0, 0.6])
    system = toy_system(H, psi, -0.5)
    assert not system.sign_free
    res = run_partial_node(QmcConfig(seed=5, gamma=-0.5, equilibration_iters=2000, measurement_iters=30_000), system)
    assert abs(res.mean - fixed_node_energy_matrix(H, psi, -0.5)) < 3 * res.stderr


def test_exact_hamiltonian_at_gamma_minus_one():
    H, psi = random_toy(np.random.default_rng(10), 6)
    system = toy_system(H, psi, -1.0)
    cfg = QmcConfig(seed=7, gamma=-1.0, target_population=5000.0, equilibration_iters=2000, measurement_iters=30_000)
    res = run_partial_node(cfg, system)
    assert abs(res.mean - lowest_eigenpair(H)[0]) < 3 * res.stderr


def test_partial_node_energies_rise_with_gamma():
    H, psi = random_toy(np.random.default_rng(14), 6)
    grid = [-1.0, -0.75, -0.5, -0.25, 0.0]
    out = []
    for g in grid:
        cfg = QmcConfig(seed=20, gamma=g, target_population=2000.0, equilibration_iters=2000,
                        measurement_iters=20_000)
        res = run(cfg, toy_system(H, psi, g), allow_sign_problem=True)
        out.append((res.mean, res.stderr))
    exact = gamma_curve(H, psi, grid)
    for (m, s), e in zip(out, exact):
        assert abs(m - e) < 3 * s
    for (m1, s1), (m2, s2) in zip(out, out[1:]):
        assert m2 >= m1 - 3 * np.hypot(s1, s2)


def test_sign_problem_detection():
    H = np.array([[0.0, 0.5], [0.5, 0.7]])
    system = toy_system(H, np.array([1.0, 0.6]), -1.0)
    cfg = QmcConfig(seed=0, gamma=-1.0, signal_threshold=1.5, signal_window=5, **SHORT)
    with pytest.raises(SignProblemError):
        run_partial_node(cfg, system)


def test_extrapolation_examples():
    assert extrapolate_gamma((0.0, -1.3, 0.0), (0.1, -1.3, 0.0)) == (pytest.approx(-1.3), 0.0)
    value, err = extrapolate_gamma((0.0, 1.0, 0.01), (0.1, 1.05, 0.01))
    assert value == pytest.approx(0.5)
    assert err == pytest.approx(0.01 * np.hypot(11, 10))
    with pytest.raises(ValueError):
        extrapolate_gamma((0.1, 1.0, 0.0), (0.1, 2.0, 0.0))
    with pytest.raises(ValueError):
        extrapolate_gamma((-1.0, 1.0, 0.0), (0.1, 2.0, 0.0))


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), st.integers(6, 20))
def test_extrapolation_of_exact_curve_is_bounded(seed, n):
    H, psi = random_toy(np.random.default_rng(seed), n)
    e0, e1 = gamma_curve(H, psi, [0.0, 0.1])
    value, _ = extrapolate_gamma((0.0, e0, 0.0), (0.1, e1, 0.0))
    assert lowest_eigenpair(H)[0] - 1e-9 <= value <= e0 + 1e-9
