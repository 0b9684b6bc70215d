"""Fixed-node and partial-node FCIQMC with importance sampling.

Walkers carry real amplitudes ``f_i = psi_i C_i`` in the importance-sampled
gauge, propagated with ``1 - dtau (H~ - S)`` where

    H~_ij = psi_i H^fn_ij(gamma) / psi_j     (i != j),     H~_ii = H^fn_ii.

For ``gamma >= 0`` every off-diagonal element of ``H~`` is non-positive, so
spawning never changes sign. The energy is the mixed estimator
``sum_i f_i E^L_i / sum_i f_i`` with local energies ``E^L_i = (H psi)_i / psi_i``;
since ``H^fn psi = H psi`` for every ``gamma`` this equals the projected
energy of ``H^fn``.

The determinant spaces targeted here are small (at most a few hundred
states), so the Hamiltonian over the space and its connection lists are
assembled once up front.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numba
import numpy as np

from .blocking import BlockingResult, blocking_analysis
from .chemio import Determinant, IntegralTable, connected_determinants, hamiltonian_element
from .exactsolver import NodeError, SpaceHamiltonian, fixed_node_matrix

log = logging.getLogger(__name__)

__all__ = [
    "EnergySeries",
    "FixedNodeSystem",
    "PopulationExplosion",
    "QmcConfig",
    "QmcResult",
    "SignProblemError",
    "WalkerPopulation",
    "extrapolate_gamma",
    "initialize_vmc",
    "local_energy",
    "mixed_energy",
    "propagate_step",
    "run",
    "run_partial_node",
    "stable_dtau",
]


class PopulationExplosion(RuntimeError):
    pass


class SignProblemError(RuntimeError):
    pass


@dataclass(frozen=True, kw_only=True)
class QmcConfig:
    seed: int
    dtau: float = 0.005
    gamma: float = 0.0
    target_population: float = 1000.0
    shift_damping: float = 0.05
    equilibration_iters: int = 5000
    measurement_iters: int = 50000
    annihilation_floor: float = 1e-3
    n_vmc_samples: int = 20000
    vmc_burn_in: int = 1000
    zero_tolerance: float = 1e-12
    population_cap: float = 1e3
    auto_dtau: bool = True
    signal_threshold: float = 0.02
    signal_window: int = 2000

    def __post_init__(self):
        if self.dtau <= 0:
            raise ValueError("dtau must be positive")
        if self.target_population <= 0:
            raise ValueError("target_population must be positive")
        if self.gamma < -1:
            raise ValueError("gamma must be >= -1")
        if self.equilibration_iters < 0 or self.measurement_iters < 2:
            raise ValueError("need non-negative equilibration and at least two measurement iterations")
        if self.annihilation_floor <= 0 or self.zero_tolerance <= 0:
            raise ValueError("annihilation_floor and zero_tolerance must be positive")
        if self.population_cap <= 1:
            raise ValueError("population_cap is a multiple of the target and must exceed 1")

    def replace(self, **changes) -> "QmcConfig":
        return QmcConfig(**(asdict(self) | changes))


# ----------------------------------------------------------------------------
# problem assembly


def local_energy(det: Determinant, oracle: Callable[[Determinant], float], t: IntegralTable,
                 zero_tolerance: float = 1e-12) -> float:
    """``sum_j H_Dj psi_j / psi_D`` including the diagonal term."""
    psi_d = oracle(det)
    if abs(psi_d) < zero_tolerance:
        raise NodeError(f"{det} has |psi_T| below {zero_tolerance}")
    total = hamiltonian_element(det, det, t) * psi_d
    for other, h in connected_determinants(det, t):
        total += h * oracle(other)
    return total / psi_d


@dataclass
class FixedNodeSystem:
    """Importance-sampled fixed-node propagator on the determinants with non-negligible trial overlap."""

    dets: list
    psi: np.ndarray
    gamma: float
    diag: np.ndarray
    local: np.ndarray
    indptr: np.ndarray
    targets: np.ndarray
    values: np.ndarray
    dropped: int = 0

    @classmethod
    def build(cls, sh: SpaceHamiltonian, overlaps, gamma: float, zero_tolerance: float = 1e-12) -> "FixedNodeSystem":
        """``overlaps`` may be a callable, a mapping from determinants or a vector over ``sh.dets``."""
        if callable(overlaps):
            psi = np.array([overlaps(d) for d in sh.dets], dtype=float)
        elif isinstance(overlaps, Mapping):
            psi = np.array([overlaps.get(d, 0.0) for d in sh.dets], dtype=float)
        else:
            psi = np.asarray(overlaps, dtype=float)
        if psi.shape != (len(sh),):
            raise ValueError("trial vector does not match the space")
        Hfn, keep = fixed_node_matrix(sh.H, psi, gamma, zero_tolerance)
        if not keep.any():
            raise ValueError("no determinant has a trial overlap above the zero tolerance")
        pk = psi[keep]
        Hk = sh.H[np.ix_(keep, keep)]
        tilde = pk[:, None] * Hfn / pk[None, :]
        local = (sh.H[keep] @ psi) / pk
        # connections follow the bare Hamiltonian (uniform excitation generation)
        conn = np.abs(Hk) > 1e-13
        np.fill_diagonal(conn, False)
        indptr = np.zeros(len(pk) + 1, dtype=np.int64)
        targets, values = [], []
        for j in range(len(pk)):
            rows = np.flatnonzero(conn[:, j])
            targets.extend(rows)
            values.extend(tilde[rows, j])
            indptr[j + 1] = indptr[j] + len(rows)
        dets = [d for d, k in zip(sh.dets, keep) if k]
        return cls(dets, pk, float(gamma), np.diag(Hfn).copy(), local, indptr,
                   np.array(targets, dtype=np.int64), np.array(values, dtype=float), int((~keep).sum()))

    def __len__(self):
        return len(self.dets)

    @property
    def sign_free(self) -> bool:
        return bool(np.all(self.values <= 0))


@dataclass
class WalkerPopulation:
    amplitudes: np.ndarray
    shift: float
    iteration: int = 0

    @property
    def total_weight(self) -> float:
        return float(np.abs(self.amplitudes).sum())

    def as_map(self, system: FixedNodeSystem) -> dict:
        return {d: float(a) for d, a in zip(system.dets, self.amplitudes) if a != 0}


# ----------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _metropolis(start, indptr, targets, weight, uniforms, burn_in, counts):
    i = start
    n_steps = uniforms.shape[0] // 2
    for step in range(n_steps):
        ni = indptr[i + 1] - indptr[i]
        if ni > 0:
            pick = indptr[i] + min(int(uniforms[2 * step] * ni), ni - 1)
            j = targets[pick]
            nj = indptr[j + 1] - indptr[j]
            ratio = weight[j] * ni / (weight[i] * nj)
            if uniforms[2 * step + 1] < ratio:
                i = j
        if step >= burn_in:
            counts[i] += 1


@numba.njit(cache=True)
def _step(f, diag, indptr, targets, values, dtau, shift, floor, uniforms):
    """One spawn/death/annihilation sweep; returns (new amplitudes, negative spawns, bad death factor)."""
    n = f.shape[0]
    new = np.empty(n)
    bad = False
    for j in range(n):
        factor = 1.0 - dtau * (diag[j] - shift)
        if factor < 0 and f[j] != 0:
            bad = True
        new[j] = f[j] * factor
    u = 0
    wrong_sign = 0
    for j in range(n):
        fj = f[j]
        if fj == 0:
            continue
        nconn = indptr[j + 1] - indptr[j]
        if nconn == 0:
            continue
        natt = int(math.ceil(abs(fj)))
        w = fj / natt
        for a in range(natt):
            pick = indptr[j] + min(int(uniforms[u] * nconn), nconn - 1)
            u += 1
            amp = -dtau * values[pick] * w * nconn
            if amp * fj < 0:
                wrong_sign += 1
            new[targets[pick]] += amp
    for i in range(n):
        a = abs(new[i])
        if 0 < a < floor:
            new[i] = math.copysign(floor, new[i]) if uniforms[u] * floor < a else 0.0
        u += 1
    return new, wrong_sign, bad


def _attempts(f, indptr) -> int:
    has_conn = np.diff(indptr) > 0
    return int(np.ceil(np.abs(f[has_conn])).sum())


# ----------------------------------------------------------------------------
# public operations


def initialize_vmc(system: FixedNodeSystem, cfg: QmcConfig, rng) -> WalkerPopulation:
    """Metropolis sample of |psi_T|^2 over excitation moves, loaded as positive walker weights."""
    weight = system.psi**2
    if not np.any(weight > 0):
        raise ValueError("trial has no determinant with non-zero overlap")
    start = int(np.argmax(weight))
    counts = np.zeros(len(system), dtype=np.int64)
    uniforms = rng.random(2 * (cfg.n_vmc_samples + cfg.vmc_burn_in))
    _metropolis(start, system.indptr, system.targets, weight, uniforms, cfg.vmc_burn_in, counts)
    # f_i = psi_i C_i is non-negative when C carries the trial's signs
    f = counts * (cfg.target_population / counts.sum())
    pop = WalkerPopulation(f, 0.0)
    e0 = mixed_energy(pop, system)
    pop.shift = e0 if np.isfinite(e0) else float(system.diag.min())
    return pop


def mixed_energy(pop: WalkerPopulation, system: FixedNodeSystem) -> float:
    """Mixed estimator; NaN when the walker sum vanishes (iteration is skipped)."""
    denom = pop.amplitudes.sum()
    if denom == 0:
        return float("nan")
    return float(pop.amplitudes @ system.local / denom)


def propagate_step(pop: WalkerPopulation, system: FixedNodeSystem, cfg: QmcConfig, rng) -> tuple[WalkerPopulation, int]:
    """Advance one time step and update the shift; returns the new population and negative-spawn count."""
    f = pop.amplitudes
    uniforms = rng.random(_attempts(f, system.indptr) + len(f))
    new, wrong, bad = _step(f, system.diag, system.indptr, system.targets, system.values,
                            cfg.dtau, pop.shift, cfg.annihilation_floor, uniforms)
    if bad:
        raise ValueError(f"dtau={cfg.dtau} too large: 1 - dtau (H_ii - S) turned negative")
    weight = float(np.abs(new).sum())
    if weight > cfg.population_cap * cfg.target_population:
        raise PopulationExplosion(
            f"walker weight {weight:.3g} exceeds {cfg.population_cap:g} x target at iteration {pop.iteration + 1}")
    if weight == 0:
        raise PopulationExplosion(f"population died out at iteration {pop.iteration + 1}")
    shift = pop.shift - (cfg.shift_damping / cfg.dtau) * math.log(weight / cfg.target_population)
    return WalkerPopulation(new, shift, pop.iteration + 1), wrong


@dataclass
class EnergySeries:
    energy: np.ndarray
    population: np.ndarray
    shift: np.ndarray
    start_iteration: int = 0

    def __len__(self):
        return len(self.energy)


@dataclass
class QmcResult:
    mean: float
    stderr: float
    series: EnergySeries
    trace: EnergySeries
    blocking: BlockingResult
    config: QmcConfig
    negative_spawns: int = 0
    n_determinants: int = 0
    dropped_determinants: int = 0
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "blocking_converged": self.blocking.converged,
            "blocking": self.blocking.table(),
            "negative_spawns": self.negative_spawns,
            "n_determinants": self.n_determinants,
            "dropped_determinants": self.dropped_determinants,
            "initial_energy": float(self.trace.energy[0]),
            "config": asdict(self.config),
            **self.extra,
        }

    def write(self, prefix) -> None:
        """``<prefix>.csv`` with the full trace and ``<prefix>.json`` with the summary."""
        prefix = str(prefix)
        with open(prefix + ".csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "energy", "population", "shift"])
            for k in range(len(self.trace)):
                w.writerow([k, repr(float(self.trace.energy[k])), repr(float(self.trace.population[k])),
                            repr(float(self.trace.shift[k]))])
        Path(prefix + ".json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def stable_dtau(system: FixedNodeSystem, cfg: QmcConfig, shift: float) -> float:
    """``cfg.dtau``, reduced when needed so every death factor stays at or above one half.

    Large sign-flip potentials on determinants with small trial overlaps
    would otherwise make ``1 - dtau (H_ii - S)`` negative. The stationary
    state of the projector does not depend on the step, only the imaginary
    time covered per iteration does.
    """
    span = float(system.diag.max()) - shift
    if not cfg.auto_dtau or span <= 0 or cfg.dtau * span <= 0.5:
        return cfg.dtau
    dtau = 0.5 / span
    log.warning("reducing dtau from %g to %.3g (max diagonal %.3g Ha above the shift)", cfg.dtau, dtau, span)
    return dtau


def run(cfg: QmcConfig, system: FixedNodeSystem, allow_sign_problem: bool | None = None) -> QmcResult:
    """Equilibrate then measure; error bars by reblocking the measurement-phase energies."""
    if allow_sign_problem is None:
        allow_sign_problem = cfg.gamma < 0
    if not allow_sign_problem and not system.sign_free:
        raise ValueError("propagator is not sign-free; use run_partial_node for gamma < 0")
    if abs(system.gamma - cfg.gamma) > 0:
        raise ValueError(f"system built for gamma={system.gamma}, config has gamma={cfg.gamma}")
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    pop = initialize_vmc(system, cfg, rng)
    requested = cfg.dtau
    cfg = cfg.replace(dtau=stable_dtau(system, cfg, pop.shift))
    total = cfg.equilibration_iters + cfg.measurement_iters
    energy = np.empty(total + 1)
    population = np.empty(total + 1)
    shift = np.empty(total + 1)
    energy[0], population[0], shift[0] = mixed_energy(pop, system), pop.total_weight, pop.shift
    negative = 0
    low_signal = 0
    for it in range(1, total + 1):
        pop, wrong = propagate_step(pop, system, cfg, rng)
        negative += wrong
        energy[it] = mixed_energy(pop, system)
        population[it] = pop.total_weight
        shift[it] = pop.shift
        if allow_sign_problem:
            signal = abs(pop.amplitudes.sum()) / population[it]
            low_signal = low_signal + 1 if signal < cfg.signal_threshold else 0
            if low_signal >= cfg.signal_window:
                raise SignProblemError(
                    f"|sum f| / sum |f| stayed below {cfg.signal_threshold} for {cfg.signal_window} iterations "
                    f"(gamma={cfg.gamma}); increase target_population")
    trace = EnergySeries(energy, population, shift)
    m0 = cfg.equilibration_iters + 1
    series = EnergySeries(energy[m0:], population[m0:], shift[m0:], m0)
    blk = blocking_analysis(series.energy)
    return QmcResult(blk.mean, blk.stderr, series, trace, blk, cfg, negative, len(system), system.dropped,
                     {"requested_dtau": requested})


def run_partial_node(cfg: QmcConfig, system: FixedNodeSystem) -> QmcResult:
    """Run with ``-1 <= gamma < 0``, where mixed-sign spawning is allowed and monitored."""
    if not -1 <= cfg.gamma < 0:
        raise ValueError("partial-node runs need -1 <= gamma < 0")
    return run(cfg, system, allow_sign_problem=True)


def extrapolate_gamma(e1: tuple, e2: tuple) -> tuple[float, float]:
    """Linear extrapolation of ``(gamma, E, err)`` pairs to ``gamma = -1`` with propagated error."""
    g1, v1, s1 = e1
    g2, v2, s2 = e2
    if g1 == g2:
        raise ValueError("extrapolation needs two distinct gamma values")
    if g1 <= -1 or g2 <= -1:
        raise ValueError("gamma values must exceed -1")
    w1 = (g2 + 1) / (g2 - g1)
    w2 = -(g1 + 1) / (g2 - g1)
    return w1 * v1 + w2 * v2, math.hypot(w1 * s1, w2 * s2)
