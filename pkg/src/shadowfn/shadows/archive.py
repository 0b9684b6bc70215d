"""Shadow archives: collection, JSONL persistence and resumption.

File layout (UTF-8, one JSON object per line)::

    {"version": 1, "n_qubits": 8, "ensemble": "Cpartitioned", "block_size": 4, "p": 0.0, "seed": 7}
    {"k": 0, "tableau": ["<hex>", "<hex>"], "b": "01100101"}
    ...

``tableau`` holds one hex string per Clifford block: the block's 2m x 2m
row-major bit matrix (rows are (x | z) images of X_0..X_{m-1}, Z_0..Z_{m-1})
followed by its 2m sign bits, packed MSB-first. ``b`` lists qubit 0 first.

Record ``k`` draws all of its randomness from
``Philox(key=seed, counter=[0, 0, 0, k])``, so archives are reproducible
bit-for-bit whatever the collection order, chunking or worker count.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from ..circuitsim import Circuit, NoiseModel, apply_circuit, compile_native, pauli_insertion_probability
from ..circuitsim import run_gates, run_gates_noisy, sample_index
from .tableau import CliffordTableau, apply_prefix, decompose, measurement_ops, sample_symplectic_rows

log = logging.getLogger(__name__)

__all__ = ["ArchiveMismatch", "ShadowArchive", "ShadowConfig", "ShadowRecord", "collect_shadows"]

FORMAT_VERSION = 1
ENSEMBLES = ("Cn", "C1_tensor", "Cpartitioned")


class ArchiveMismatch(ValueError):
    """An existing archive was produced under different settings."""


def ensemble_name(n_qubits: int, block_size: int) -> str:
    if block_size == n_qubits:
        return "Cn"
    return "C1_tensor" if block_size == 1 else "Cpartitioned"


@dataclass(frozen=True)
class ShadowConfig:
    n_qubits: int
    block_size: int
    seed: int
    p: float = 0.0

    def __post_init__(self):
        if self.n_qubits < 1 or self.block_size < 1 or self.n_qubits % self.block_size:
            raise ValueError(f"block size {self.block_size} must divide {self.n_qubits} qubits")
        if self.n_qubits > 30:
            raise ValueError("registers above 30 qubits are not supported")
        if not 0 <= self.p < 1:
            raise ValueError("noise rate must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def for_ensemble(cls, ensemble: str, n_qubits: int, seed: int, p: float = 0.0, block_size: int | None = None):
        if ensemble == "Cn":
            block_size = n_qubits
        elif ensemble == "C1_tensor":
            block_size = 1
        elif ensemble == "Cpartitioned":
            if block_size is None:
                raise ValueError("Cpartitioned needs a block_size")
        else:
            raise ValueError(f"unknown ensemble {ensemble!r}; expected one of {ENSEMBLES}")
        cfg = cls(n_qubits, block_size, seed, p)
        if cfg.ensemble != ensemble and ensemble != "Cpartitioned":
            raise ValueError(f"{ensemble} is inconsistent with block size {block_size}")
        return cfg

    @property
    def ensemble(self) -> str:
        return ensemble_name(self.n_qubits, self.block_size)

    def header(self) -> dict:
        return {"version": FORMAT_VERSION, "n_qubits": self.n_qubits, "ensemble": self.ensemble,
                "block_size": self.block_size, "p": self.p, "seed": self.seed}


@dataclass(frozen=True)
class ShadowRecord:
    k: int
    tableaus: tuple
    b: int


@dataclass(eq=False)
class ShadowArchive:
    config: ShadowConfig
    xs: np.ndarray = None
    zs: np.ndarray = None
    r: np.ndarray = None
    b: np.ndarray = None
    path: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        n2 = 2 * self.config.n_qubits
        if self.xs is None:
            self.xs = np.zeros((0, n2), dtype=np.int64)
            self.zs = np.zeros((0, n2), dtype=np.int64)
            self.r = np.zeros((0, n2), dtype=np.int64)
            self.b = np.zeros(0, dtype=np.int64)

    @property
    def n_qubits(self) -> int:
        return self.config.n_qubits

    @property
    def block_size(self) -> int:
        return self.config.block_size

    @property
    def ensemble(self) -> str:
        return self.config.ensemble

    def __len__(self) -> int:
        return int(self.b.shape[0])

    def head(self, count: int) -> "ShadowArchive":
        """The first ``count`` records (an archive collected with a smaller count)."""
        if count > len(self):
            raise ValueError(f"archive holds {len(self)} records, {count} requested")
        return ShadowArchive(self.config, self.xs[:count], self.zs[:count], self.r[:count], self.b[:count])

    def extend(self, xs, zs, r, b) -> None:
        self.xs = np.vstack([self.xs, xs])
        self.zs = np.vstack([self.zs, zs])
        self.r = np.vstack([self.r, r])
        self.b = np.concatenate([self.b, b])

    def record(self, k: int) -> ShadowRecord:
        n, bs = self.n_qubits, self.block_size
        return ShadowRecord(k, tuple(_block_tableau(self.xs[k], self.zs[k], self.r[k], n, bs, o)
                                     for o in range(0, n, bs)), int(self.b[k]))

    def full_tableau(self, k: int) -> CliffordTableau:
        return CliffordTableau(self.n_qubits, self.xs[k], self.zs[k], self.r[k])

    # --- serialization

    def record_line(self, k: int) -> str:
        n, bs = self.n_qubits, self.block_size
        blocks = [_encode_block(self.xs[k], self.zs[k], self.r[k], n, bs, o) for o in range(0, n, bs)]
        bits = "".join(str((int(self.b[k]) >> q) & 1) for q in range(n))
        return json.dumps({"k": k, "tableau": blocks, "b": bits}, separators=(",", ":"))

    def write(self, path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.config.header()) + "\n")
            for k in range(len(self)):
                fh.write(self.record_line(k) + "\n")
        self.path = path

    @classmethod
    def load(cls, path, repair: bool = False) -> "ShadowArchive":
        """Read an archive; a torn trailing line is dropped (and truncated away if ``repair``)."""
        path = Path(path)
        raw = path.read_bytes()
        lines = raw.split(b"\n")
        try:
            header = json.loads(lines[0])
        except (json.JSONDecodeError, IndexError) as exc:
            raise ValueError(f"{path}: unreadable archive header") from exc
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported archive version {header.get('version')}")
        cfg = ShadowConfig(header["n_qubits"], header["block_size"], header["seed"], header["p"])
        if cfg.ensemble != header["ensemble"]:
            raise ValueError(f"{path}: header ensemble {header['ensemble']} contradicts block size")
        n, bs = cfg.n_qubits, cfg.block_size
        rows = []
        good_bytes = len(lines[0]) + 1
        for lineno, line in enumerate(lines[1:-1], start=2):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: corrupt record") from exc
            if rec["k"] != len(rows):
                raise ValueError(f"{path}:{lineno}: expected record {len(rows)}, found {rec['k']}")
            rows.append(rec)
            good_bytes += len(line) + 1
        torn = len(lines) > 1 and lines[-1] != b""
        if torn:
            log.warning("%s: dropping incomplete trailing record", path)
            if repair:
                with path.open("r+b") as fh:
                    fh.truncate(good_bytes)
        K = len(rows)
        xs = np.zeros((K, 2 * n), dtype=np.int64)
        zs = np.zeros((K, 2 * n), dtype=np.int64)
        r = np.zeros((K, 2 * n), dtype=np.int64)
        b = np.zeros(K, dtype=np.int64)
        for k, rec in enumerate(rows):
            if len(rec["b"]) != n or len(rec["tableau"]) != n // bs:
                raise ValueError(f"{path}: record {k} has the wrong size")
            for blk, h in enumerate(rec["tableau"]):
                _decode_block(h, xs[k], zs[k], r[k], n, bs, blk * bs)
            b[k] = sum(int(c) << q for q, c in enumerate(rec["b"]))
        return cls(cfg, xs, zs, r, b, path)


def _block_rows(xs, zs, r, n, bs, o):
    m = (1 << bs) - 1
    idx = list(range(o, o + bs)) + list(range(n + o, n + o + bs))
    return ([(int(xs[i]) >> o) & m for i in idx], [(int(zs[i]) >> o) & m for i in idx], [int(r[i]) for i in idx])


def _block_tableau(xs, zs, r, n, bs, o) -> CliffordTableau:
    bx, bz, br = _block_rows(xs, zs, r, n, bs, o)
    return CliffordTableau(bs, np.array(bx), np.array(bz), np.array(br))


def _encode_block(xs, zs, r, n, bs, o) -> str:
    bx, bz, br = _block_rows(xs, zs, r, n, bs, o)
    bits = []
    for x, z in zip(bx, bz):
        bits.extend((x >> q) & 1 for q in range(bs))
        bits.extend((z >> q) & 1 for q in range(bs))
    bits.extend(br)
    return np.packbits(np.array(bits, dtype=np.uint8)).tobytes().hex()


def _decode_block(h, xs, zs, r, n, bs, o) -> None:
    width = 2 * bs
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(h), dtype=np.uint8))
    if bits.size < width * width + width:
        raise ValueError("tableau hex string too short")
    mat = bits[: width * width].reshape(width, width)
    weights = 1 << np.arange(bs)
    for row in range(width):
        target = o + row if row < bs else n + o + (row - bs)
        xs[target] = int(mat[row, :bs] @ weights) << o
        zs[target] = int(mat[row, bs:] @ weights) << o
        r[target] = int(bits[width * width + row])


# ----------------------------------------------------------------------------
# collection


@numba.njit(cache=True)
def _collect_record(n, bs, vch, wch, phases, state, noisy, p1, p2, w_unif, u_meas, xs, zs, r):
    bx = np.empty(2 * bs, dtype=np.int64)
    bz = np.empty(2 * bs, dtype=np.int64)
    br = np.empty(2 * bs, dtype=np.int64)
    for blk in range(n // bs):
        o = blk * bs
        sample_symplectic_rows(bs, vch[o:o + bs], wch[o:o + bs], phases[2 * o:2 * o + 2 * bs], bx, bz, br)
        for j in range(bs):
            xs[o + j] = bx[j] << o
            zs[o + j] = bz[j] << o
            r[o + j] = br[j]
            xs[n + o + j] = bx[bs + j] << o
            zs[n + o + j] = bz[bs + j] << o
            r[n + o + j] = br[bs + j]
    gamma = np.zeros(n, dtype=np.int64)
    amap = np.zeros(n, dtype=np.int64)
    hset, c, ok = decompose(xs, zs, r, n, gamma, amap)
    if not ok:
        return -1
    ops = measurement_ops(n, hset, gamma)
    count = 0
    for i in range(ops.shape[0]):
        count += 3 if ops[i, 0] == 0 else 1
    kinds = np.empty(count, dtype=np.int64)
    q0 = np.empty(count, dtype=np.int64)
    q1 = np.full(count, -1, dtype=np.int64)
    angles = np.zeros(count, dtype=np.float64)
    m = 0
    half = np.pi / 2
    for i in range(ops.shape[0]):
        kind, a, bq = ops[i, 0], ops[i, 1], ops[i, 2]
        if kind == 0:  # H -> RZ RX RZ
            kinds[m], q0[m], angles[m] = 1, a, half
            kinds[m + 1], q0[m + 1], angles[m + 1] = 0, a, half
            kinds[m + 2], q0[m + 2], angles[m + 2] = 1, a, half
            m += 3
        elif kind == 1:  # S^dag -> RZ(-pi/2)
            kinds[m], q0[m], angles[m] = 1, a, -half
            m += 1
        else:
            kinds[m], q0[m], q1[m] = 4, a, bq
            m += 1
    if noisy:
        run_gates_noisy(state, kinds, q0, q1, angles, p1, p2, w_unif)
    else:
        run_gates(state, kinds, q0, q1, angles)
    bprime = sample_index(state, u_meas)
    return apply_prefix(c, amap, n, bprime)


def max_measurement_gates(n: int) -> int:
    return 7 * n + n * (n - 1) // 2


def _record_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, k]))


@dataclass
class _Job:
    config: ShadowConfig
    tau_state: np.ndarray | None
    tau_native: tuple | None
    p1: float
    p2: float


def _collect_range(job: _Job, start: int, stop: int):
    cfg = job.config
    n, bs = cfg.n_qubits, cfg.block_size
    count = stop - start
    xs = np.zeros((count, 2 * n), dtype=np.int64)
    zs = np.zeros((count, 2 * n), dtype=np.int64)
    r = np.zeros((count, 2 * n), dtype=np.int64)
    b = np.zeros(count, dtype=np.int64)
    highs = np.tile(np.array([4 ** (bs - j) for j in range(bs)], dtype=np.int64), n // bs)
    noisy = job.tau_native is not None
    n_tau = len(job.tau_native[0]) if noisy else 0
    n_w = max_measurement_gates(n)
    dim = 1 << n
    for i, k in enumerate(range(start, stop)):
        rng = _record_rng(cfg.seed, k)
        v = rng.integers(1, highs)
        w = rng.integers(0, highs)
        phases = rng.integers(0, 2, size=2 * n)
        u_meas = rng.random()
        if noisy:
            tau_unif = rng.random(2 * n_tau)
            w_unif = rng.random(2 * n_w)
            state = np.zeros(dim, dtype=np.complex128)
            state[0] = 1.0
            run_gates_noisy(state, *job.tau_native, job.p1, job.p2, tau_unif)
        else:
            w_unif = np.empty(0)
            state = job.tau_state.copy()
        out = _collect_record(n, bs, v, w, phases, state, noisy, job.p1, job.p2, w_unif, u_meas, xs[i], zs[i], r[i])
        if out < 0:
            raise RuntimeError(f"record {k}: Clifford decomposition failed")
        b[i] = out
    return xs, zs, r, b


def collect_shadows(tau: Circuit, config: ShadowConfig, count: int, nm: NoiseModel | None = None,
                    path=None, workers: int = 1, chunk: int = 4096) -> ShadowArchive:
    """Append ``count`` records to the archive at ``path`` (created if absent).

    Each record samples a fresh Clifford, prepares ``tau`` (a fresh noisy
    trajectory when ``config.p > 0``), runs the measurement circuit and takes
    one shot. With a ``path`` the archive is written incrementally and an
    existing file is resumed after checking that its header matches.
    """
    if tau.n_qubits != config.n_qubits:
        raise ValueError(f"tau acts on {tau.n_qubits} qubits, archive expects {config.n_qubits}")
    if count < 0:
        raise ValueError("count must be non-negative")
    nm = nm or NoiseModel(config.p)
    if nm.p != config.p:
        raise ValueError("noise model rate differs from the archive configuration")
    archive = ShadowArchive(config)
    if path is not None:
        path = Path(path)
        if path.exists() and path.stat().st_size > 0:
            archive = ShadowArchive.load(path, repair=True)
            if archive.config != config:
                raise ArchiveMismatch(
                    f"{path} was collected with {archive.config.header()}, requested {config.header()}")
        else:
            path.write_text(json.dumps(config.header()) + "\n", encoding="utf-8")
        archive.path = path
    if config.p > 0:
        native = compile_native(tau)
        job = _Job(config, None, native.arrays(),
                   pauli_insertion_probability(nm.one_qubit_rate, 1),
                   pauli_insertion_probability(nm.two_qubit_rate, 2))
    else:
        state = np.zeros(1 << config.n_qubits, dtype=np.complex128)
        state[0] = 1.0
        job = _Job(config, apply_circuit(state, tau), None, 0.0, 0.0)
    start = len(archive)
    bounds = [(s, min(s + chunk, start + count)) for s in range(start, start + count, chunk)]
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_collect_range, [job] * len(bounds), *zip(*bounds))
            _store(archive, zip(bounds, results), path)
    else:
        _store(archive, ((bd, _collect_range(job, *bd)) for bd in bounds), path)
    return archive


def _store(archive: ShadowArchive, chunks, path) -> None:
    for (lo, hi), arrays in chunks:
        first = len(archive)
        archive.extend(*arrays)
        if path is not None:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write("".join(archive.record_line(k) + "\n" for k in range(first, len(archive))))
                fh.flush()
                os.fsync(fh.fileno())
        log.debug("collected records %d..%d", lo, hi)
