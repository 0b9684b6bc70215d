"""Command-line pipeline: exact baselines, ansatz optimization, shadow collection, QMC and noise sweeps.

Every subcommand reads a JSON run configuration (``--config``), writes its
artifacts under the output directory and prints the report JSON. Reports
embed the fully resolved configuration and contain no timestamps, so equal
configuration and seed give byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.optimize

from .chemio import Determinant, FcidumpError, read_fcidump
from .circuitsim import NoiseModel
from .exactsolver import SpaceHamiltonian, fixed_node_energy_matrix, lowest_eigenpair, variational_energy_matrix
from .fciqmc import FixedNodeSystem, QmcConfig, extrapolate_gamma, run, run_partial_node
from .lucj import (
    LucjParams,
    TrialState,
    align_and_project,
    build_tau_circuit,
    exact_overlaps,
    largest_overlap_determinant,
    lucj_state_vector,
    optimize_lucj,
    optimize_lucj_multistart,
)
from .shadows import ArchiveMismatch, ShadowArchive, ShadowConfig, collect_shadows, estimate_overlaps

log = logging.getLogger("shadowfn")

__all__ = [
    "ConfigError",
    "NoiseSpec",
    "OptimizeSpec",
    "RunConfig",
    "ShadowSpec",
    "cmd_exact",
    "cmd_noise_sweep",
    "cmd_optimize",
    "cmd_qmc",
    "cmd_shadows",
    "main",
]


class ConfigError(ValueError):
    """Invalid run configuration; maps to exit code 2."""


def default_fcidump() -> Path:
    return Path(str(resources.files("shadowfn") / "data" / "h4_sto6g_2bohr.FCIDUMP"))


def default_params() -> Path:
    return Path(str(resources.files("shadowfn") / "data" / "h4_lucj_params.json"))


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class OptimizeSpec:
    n_starts: int = 8
    scale: float = 0.1
    budget: int = 2000
    init: str | None = None


@dataclass(frozen=True)
class ShadowSpec:
    ensemble: str = "Cn"
    block_size: int | None = None
    count: int = 15625
    p: float = 0.0
    archive: str | None = None
    workers: int = 1
    zero_tolerance: float = 1e-12


@dataclass(frozen=True)
class NoiseSpec:
    p_values: tuple = (0.0, 0.001, 0.002, 0.004, 0.008, 0.016, 0.032)
    pair: tuple = ("abab", "baba")
    run_qmc: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int
    system: str | None = None
    params: str | None = None
    optimize: OptimizeSpec = field(default_factory=OptimizeSpec)
    alignment: str = "largest"
    oracle: str = "exact"
    shadows: ShadowSpec = field(default_factory=ShadowSpec)
    qmc: dict = field(default_factory=dict)
    gammas: tuple = (0.0, 0.1)
    repeats: int = 1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    output: str = "results"

    def system_path(self) -> Path:
        return Path(self.system) if self.system else default_fcidump()

    def qmc_config(self, gamma: float, seed: int) -> QmcConfig:
        return QmcConfig(**(self.qmc | {"gamma": gamma, "seed": seed}))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = str(self.system_path())
        return d


_NESTED = {"optimize": OptimizeSpec, "shadows": ShadowSpec, "noise": NoiseSpec}
_QMC_FIELDS = {f.name for f in dataclasses.fields(QmcConfig)} - {"gamma", "seed"}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED and cls is RunConfig:
            value = _build(_NESTED[key], value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Parse and validate a run configuration; relative paths resolve against the config file."""
    data = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        base = p.parent
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output"] = str(Path(out).resolve())
    if "seed" not in data:
        raise ConfigError("seed: required (set it in the config or pass --seed)")
    for key in ("system", "params"):
        if data.get(key):
            data[key] = str((base / data[key]).resolve())
    if isinstance(data.get("shadows"), dict) and data["shadows"].get("archive"):
        data["shadows"]["archive"] = str((base / data["shadows"]["archive"]).resolve())
    if isinstance(data.get("optimize"), dict) and data["optimize"].get("init"):
        data["optimize"]["init"] = str((base / data["optimize"]["init"]).resolve())
    if "output" in data:
        data["output"] = str((base / data["output"]).resolve())
    cfg = _build(RunConfig, data, "config")
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    if not cfg.system_path().is_file():
        raise ConfigError(f"system: FCIDUMP {cfg.system_path()} does not exist")
    if cfg.params is not None and not Path(cfg.params).is_file():
        raise ConfigError(f"params: {cfg.params} does not exist")
    if cfg.optimize.init is not None and not Path(cfg.optimize.init).is_file():
        raise ConfigError(f"optimize.init: {cfg.optimize.init} does not exist")
    if cfg.oracle not in ("exact", "shadow"):
        raise ConfigError("oracle: must be 'exact' or 'shadow'")
    if cfg.alignment != "largest":
        try:
            Determinant.from_string(cfg.alignment)
        except ValueError as exc:
            raise ConfigError(f"alignment: {exc}") from None
    unknown = sorted(set(cfg.qmc) - _QMC_FIELDS)
    if unknown:
        raise ConfigError(f"qmc: unknown field(s) {', '.join(unknown)}")
    if not cfg.gammas or any(not isinstance(g, (int, float)) or g < -1 for g in cfg.gammas):
        raise ConfigError("gammas: need at least one value, each >= -1")
    if not isinstance(cfg.repeats, int) or cfg.repeats < 1:
        raise ConfigError("repeats: must be a positive integer")
    s = cfg.shadows
    if not isinstance(s.count, int) or s.count < 1:
        raise ConfigError("shadows.count: must be a positive integer")
    if not 0 <= s.p < 1:
        raise ConfigError("shadows.p: must lie in [0, 1)")
    if not isinstance(s.workers, int) or s.workers < 1:
        raise ConfigError("shadows.workers: must be a positive integer")
    if any(not 0 <= p < 1 for p in cfg.noise.p_values):
        raise ConfigError("noise.p_values: each must lie in [0, 1)")
    if len(cfg.noise.pair) != 2:
        raise ConfigError("noise.pair: need exactly two determinants")
    try:
        cfg.qmc_config(0.0, cfg.seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"qmc: {exc}") from None


# ----------------------------------------------------------------------------
# shared pipeline stages


@dataclass
class Problem:
    t: object
    sh: SpaceHamiltonian
    e_fci: float


def load_problem(cfg: RunConfig) -> Problem:
    t = read_fcidump(cfg.system_path())
    sh = SpaceHamiltonian.from_integrals(t)
    return Problem(t, sh, lowest_eigenpair(sh.H)[0])


def resolve_params(cfg: RunConfig, prob: Problem) -> LucjParams:
    """Parameters from ``cfg.params``, else the packaged H4 file for the default system, else an optimization."""
    if cfg.params is not None:
        return LucjParams.load(cfg.params)
    if cfg.system is None and default_params().is_file():
        return LucjParams.load(default_params())
    return _optimize(cfg, prob)[0].params


def _optimize(cfg: RunConfig, prob: Problem):
    spec = cfg.optimize
    if spec.init is not None:
        fit = optimize_lucj(prob.t, LucjParams.load(spec.init), budget=spec.budget)
    else:
        fit = optimize_lucj_multistart(prob.t, n_starts=spec.n_starts, scale=spec.scale,
                                       seed=cfg.seed, budget=spec.budget)
    return fit, spec


def _alignment(cfg: RunConfig, raw: dict) -> Determinant:
    if cfg.alignment == "largest":
        return largest_overlap_determinant(raw)
    return Determinant.from_string(cfg.alignment)


def exact_trial(cfg: RunConfig, params: LucjParams) -> TrialState:
    raw = exact_overlaps(params)
    return align_and_project(raw, _alignment(cfg, raw), source="exact")


def shadow_config(cfg: RunConfig, n_qubits: int, seed: int, p: float | None = None) -> ShadowConfig:
    s = cfg.shadows
    try:
        return ShadowConfig.for_ensemble(s.ensemble, n_qubits, seed, s.p if p is None else p, s.block_size)
    except ValueError as exc:
        raise ConfigError(f"shadows: {exc}") from None


def archive_path(cfg: RunConfig, sc: ShadowConfig) -> Path:
    if cfg.shadows.archive is not None and sc.seed == cfg.seed and sc.p == cfg.shadows.p:
        return Path(cfg.shadows.archive)
    return Path(cfg.output) / f"shadows_b{sc.block_size}_p{sc.p:g}_s{sc.seed}.jsonl"


def ensure_archive(cfg: RunConfig, params: LucjParams, sc: ShadowConfig, count: int) -> ShadowArchive:
    """Archive holding at least ``count`` records (resumed or collected on disk); returns the first ``count``."""
    path = archive_path(cfg, sc)
    path.parent.mkdir(parents=True, exist_ok=True)
    have = 0
    if path.exists() and path.stat().st_size > 0:
        archive = ShadowArchive.load(path, repair=True)
        if archive.config != sc:
            raise ArchiveMismatch(f"{path} was collected with {archive.config.header()}, requested {sc.header()}")
        have = len(archive)
    if have < count:
        log.info("collecting %d records into %s", count - have, path)
        archive = collect_shadows(build_tau_circuit(params), sc, count - have, NoiseModel(sc.p), path=path,
                                  workers=cfg.shadows.workers)
    return archive.head(count)


def shadow_trial(cfg: RunConfig, prob: Problem, archive: ShadowArchive) -> tuple[TrialState, dict]:
    raw = dict(zip(prob.sh.dets, (complex(z) for z in estimate_overlaps(archive, prob.sh.dets))))
    return align_and_project(raw, _alignment(cfg, raw), source="shadow"), raw


def qmc_scan(cfg: RunConfig, prob: Problem, trial: TrialState, seed: int, tag: str, tol: float) -> dict:
    """QMC at every configured gamma, artifacts under ``<output>/<tag>_g<gamma>``."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for g in cfg.gammas:
        qc = cfg.qmc_config(float(g), seed)
        system = FixedNodeSystem.build(prob.sh, trial.overlaps, qc.gamma, tol)
        res = run_partial_node(qc, system) if qc.gamma < 0 else run(qc, system)
        res.write(out / f"{tag}_g{qc.gamma:g}")
        psi = prob.sh.vector(trial.overlaps)
        exact_fn = fixed_node_energy_matrix(prob.sh.H, psi, qc.gamma, tol)
        rows.append({"gamma": qc.gamma, "energy": res.mean, "stderr": res.stderr,
                     "error_mha": 1e3 * (res.mean - prob.e_fci), "exact_fixed_node": exact_fn,
                     "initial_energy": float(res.trace.energy[0]),
                     "blocking_converged": res.blocking.converged, "n_determinants": res.n_determinants})
    report = {"seed": seed, "alignment": trial.alignment.to_string(prob.t.n_orb), "gammas": rows}
    nonneg = sorted((r for r in rows if r["gamma"] >= 0), key=lambda r: r["gamma"])
    if len(nonneg) >= 2:
        a, b = nonneg[:2]
        e, err = extrapolate_gamma((a["gamma"], a["energy"], a["stderr"]), (b["gamma"], b["energy"], b["stderr"]))
        report["extrapolated"] = {"from": [a["gamma"], b["gamma"]], "energy": e, "stderr": err,
                                  "error_mha": 1e3 * (e - prob.e_fci)}
    return report


def shadow_error_curve(cfg: RunConfig, prob: Problem, params: LucjParams, seed: int, counts) -> list[dict]:
    """gamma=0 QMC error for nested prefixes of one archive (the largest count is collected once)."""
    sc = shadow_config(cfg, 2 * prob.t.n_orb, seed)
    full = ensure_archive(cfg, params, sc, max(counts))
    rows = []
    for n in sorted(counts):
        trial = shadow_trial(cfg, prob, full.head(n))[0]
        qc = cfg.qmc_config(0.0, seed)
        res = run(qc, FixedNodeSystem.build(prob.sh, trial.overlaps, 0.0, cfg.shadows.zero_tolerance))
        rows.append({"ensemble": sc.ensemble, "block_size": sc.block_size, "seed": seed, "records": n,
                     "energy": res.mean, "stderr": res.stderr, "error_mha": 1e3 * (res.mean - prob.e_fci)})
    return rows


def _write_report(cfg: RunConfig, name: str, report: dict) -> dict:
    report = {"command": name, **report, "config": cfg.to_dict()}
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


# ----------------------------------------------------------------------------
# commands


def cmd_exact(cfg: RunConfig) -> dict:
    """FCI, LUCJ and real-trial variational energies and exact fixed-node energies per gamma."""
    prob = load_problem(cfg)
    params = resolve_params(cfg, prob)
    trial = exact_trial(cfg, params)
    psi = prob.sh.vector(trial.overlaps)
    e_lucj = variational_energy_matrix(prob.sh.H, lucj_state_vector(params, prob.sh))
    e_trial = variational_energy_matrix(prob.sh.H, psi)
    rows = [{"gamma": float(g), "energy": fixed_node_energy_matrix(prob.sh.H, psi, g)} for g in cfg.gammas]
    for r in rows:
        r["error_mha"] = 1e3 * (r["energy"] - prob.e_fci)
    return _write_report(cfg, "exact", {
        "n_determinants": len(prob.sh),
        "fci_energy": prob.e_fci,
        "lucj_energy": e_lucj,
        "lucj_error_mha": 1e3 * (e_lucj - prob.e_fci),
        "trial_energy": e_trial,
        "trial_error_mha": 1e3 * (e_trial - prob.e_fci),
        "alignment": trial.alignment.to_string(prob.t.n_orb),
        "fixed_node": rows,
    })


def cmd_optimize(cfg: RunConfig) -> dict:
    prob = load_problem(cfg)
    fit, spec = _optimize(cfg, prob)
    if not fit.converged:
        log.warning("optimizer budget exhausted before convergence")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "lucj_params.json"
    fit.params.save(path, energy=fit.energy, converged=fit.converged)
    return _write_report(cfg, "optimize", {
        "params": str(path), "energy": fit.energy, "error_mha": 1e3 * (fit.energy - prob.e_fci),
        "converged": fit.converged, "n_evaluations": fit.n_evaluations, "budget_exhausted": not fit.converged,
    })


def cmd_shadows(cfg: RunConfig) -> dict:
    """Bring the archive up to ``shadows.count`` records, resuming any existing file."""
    prob = load_problem(cfg)
    params = resolve_params(cfg, prob)
    sc = shadow_config(cfg, 2 * prob.t.n_orb, cfg.seed)
    archive = ensure_archive(cfg, params, sc, cfg.shadows.count)
    return _write_report(cfg, "shadows", {"archive": str(archive_path(cfg, sc)), "records": len(archive),
                                          "header": sc.header()})


def cmd_qmc(cfg: RunConfig) -> dict:
    prob = load_problem(cfg)
    params = resolve_params(cfg, prob)
    runs = []
    for k in range(cfg.repeats):
        seed = cfg.seed + k
        if cfg.oracle == "exact":
            trial, tol = exact_trial(cfg, params), 1e-12
        else:
            sc = shadow_config(cfg, 2 * prob.t.n_orb, seed)
            trial = shadow_trial(cfg, prob, ensure_archive(cfg, params, sc, cfg.shadows.count))[0]
            tol = cfg.shadows.zero_tolerance
        runs.append(qmc_scan(cfg, prob, trial, seed, f"qmc_{cfg.oracle}_s{seed}", tol))
    report = {"oracle": cfg.oracle, "fci_energy": prob.e_fci, "runs": runs}
    if cfg.repeats > 1:
        report["median_error_mha"] = {
            str(g): float(np.median([r["gammas"][i]["error_mha"] for r in runs])) for i, g in enumerate(cfg.gammas)}
    return _write_report(cfg, "qmc", report)


def _power_law(p, a, b):
    return a * (1 - p) ** b


def fit_power_law(p, y) -> dict:
    """Least-squares ``y = a (1 - p)^b``; returns NaNs when the fit is underdetermined or fails."""
    p, y = np.asarray(p, float), np.asarray(y, float)
    if p.size < 2 or np.ptp(p) == 0:
        return {"a": math.nan, "b": math.nan}
    try:
        with warnings.catch_warnings():
            # the covariance is unused; two points leave it undefined
            warnings.simplefilter("ignore", scipy.optimize.OptimizeWarning)
            (a, b), _ = scipy.optimize.curve_fit(_power_law, p, y, p0=(float(y[0]), 10.0), maxfev=10000)
    except RuntimeError:
        return {"a": math.nan, "b": math.nan}
    return {"a": float(a), "b": float(b)}


def cmd_noise_sweep(cfg: RunConfig) -> dict:
    """Per error rate: symmetric-pair overlaps, their ratio, and optionally the gamma=0 fixed-node error."""
    prob = load_problem(cfg)
    params = resolve_params(cfg, prob)
    pair = [Determinant.from_string(s) for s in cfg.noise.pair]
    rows = []
    for p in cfg.noise.p_values:
        sc = shadow_config(cfg, 2 * prob.t.n_orb, cfg.seed, p=float(p))
        archive = ensure_archive(cfg, params, sc, cfg.shadows.count)
        trial, raw = shadow_trial(cfg, prob, archive)
        a, b = (trial.overlaps[d] for d in pair)
        row = {"p": float(p), "overlap_0": a, "overlap_1": b, "ratio": a / b if b else math.nan,
               "magnitude_0": abs(raw[pair[0]]), "magnitude_1": abs(raw[pair[1]])}
        if cfg.noise.run_qmc:
            scan = qmc_scan(cfg, prob, trial, cfg.seed, f"noise_p{p:g}", cfg.shadows.zero_tolerance)
            g0 = scan["gammas"][0]
            row |= {"gamma": g0["gamma"], "energy": g0["energy"], "stderr": g0["stderr"], "error_mha": g0["error_mha"]}
        rows.append(row)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "noise_sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    ps = [r["p"] for r in rows]
    fits = {name: fit_power_law(ps, [r[f"magnitude_{i}"] for r in rows]) for i, name in enumerate(cfg.noise.pair)}
    return _write_report(cfg, "noise_sweep", {"pair": list(cfg.noise.pair), "rows": rows, "power_law_fit": fits})


COMMANDS = {
    "exact": cmd_exact,
    "optimize": cmd_optimize,
    "shadows": cmd_shadows,
    "qmc": cmd_qmc,
    "noise-sweep": cmd_noise_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadowfn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        report = COMMANDS[args.command](cfg)
    except (ConfigError, ArchiveMismatch, FcidumpError) as exc:
        print(f"shadowfn: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("failure", exc_info=True)
        print(f"shadowfn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
