import csv
import json

import numpy as np
import pytest

from shadowfn.chemio import Determinant, IntegralTable, write_fcidump
from shadowfn.cli import ConfigError, default_fcidump, fit_power_law, load_config, main
from shadowfn.lucj import LucjParams

from conftest import E_FCI_H4
from oracles import random_integrals

FAST_QMC = {"equilibration_iters": 500, "measurement_iters": 3000, "n_vmc_samples": 2000, "vmc_burn_in": 100,
            "target_population": 200.0}


def write_config(path, **fields):
    path.write_text(json.dumps(fields))
    return str(path)


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


@pytest.fixture()
def toy_fcidump(tmp_path):
    h, eri = random_integrals(3, np.random.default_rng(0))
    path = tmp_path / "toy.FCIDUMP"
    write_fcidump(IntegralTable(3, 2, 0, 0.5, h, eri), path)
    return path


def test_exact_report(tmp_path, capsys):
    code, rep = run_cli(capsys, "exact", "--seed", 0, "--out", tmp_path)
    assert code == 0
    assert rep["fci_energy"] == pytest.approx(E_FCI_H4, abs=1e-5)
    assert rep["n_determinants"] == 36 and rep["alignment"] == "abab"
    assert rep["trial_error_mha"] < rep["lucj_error_mha"] <= 12
    g0 = rep["fixed_node"][0]
    assert g0["gamma"] == 0 and 0 < g0["error_mha"] < rep["trial_error_mha"]
    assert json.loads((tmp_path / "exact.json").read_text()) == rep
    assert rep["config"]["seed"] == 0


def test_config_paths_resolve_against_config_file(tmp_path, toy_fcidump):
    cfg_path = write_config(tmp_path / "run.json", seed=3, system="toy.FCIDUMP", output="out")
    cfg = load_config(cfg_path)
    assert cfg.system_path() == toy_fcidump.resolve()
    assert cfg.output == str((tmp_path / "out").resolve())
    assert load_config(cfg_path, seed=9).seed == 9


@pytest.mark.parametrize("fields,match", [
    ({}, "seed"),
    ({"seed": -1}, "seed"),
    ({"seed": 1, "colour": "red"}, "unknown"),
    ({"seed": 1, "shadows": {"ensembel": "Cn"}}, r"shadows.*unknown"),
    ({"seed": 1, "qmc": {"dtau": -1.0}}, "qmc"),
    ({"seed": 1, "qmc": {"step": 0.1}}, "qmc"),
    ({"seed": 1, "oracle": "guess"}, "oracle"),
    ({"seed": 1, "system": "missing.FCIDUMP"}, "system"),
    ({"seed": 1, "gammas": []}, "gammas"),
    ({"seed": 1, "shadows": {"p": 1.5}}, "shadows.p"),
    ({"seed": 1, "alignment": "2x"}, "alignment"),
])
def test_invalid_configs(tmp_path, fields, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write_config(tmp_path / "c.json", **fields))


def test_exit_codes(tmp_path, capsys):
    assert main(["exact", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["exact", "--seed", "-1"]) == 2
    bad = tmp_path / "bad.FCIDUMP"
    bad.write_text("not an fcidump\n")
    assert main(["exact", "--config", write_config(tmp_path / "b.json", seed=0, system="bad.FCIDUMP")]) == 2
    cfg = write_config(tmp_path / "s.json", seed=0, shadows={"ensemble": "Cpartitioned", "count": 10})
    assert main(["shadows", "--config", cfg, "--out", str(tmp_path)]) == 2
    # a runtime failure: the trial has no overlap with the requested alignment determinant
    LucjParams.zeros(4, Determinant(0b0011, 0b0011)).save(tmp_path / "p.json")
    cfg = write_config(tmp_path / "a.json", seed=0, alignment="aabb", qmc=FAST_QMC, params="p.json")
    assert main(["qmc", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "AlignmentError" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_optimize_round_trip(tmp_path, capsys, toy_fcidump):
    cfg = write_config(tmp_path / "o.json", seed=4, system="toy.FCIDUMP", optimize={"n_starts": 2, "budget": 300})
    code, rep = run_cli(capsys, "optimize", "--config", cfg, "--out", tmp_path / "o1")
    assert code == 0
    saved = tmp_path / "o1" / "lucj_params.json"
    assert rep["params"] == str(saved) and rep["error_mha"] >= -1e-9
    assert json.loads(saved.read_text())["energy"] == rep["energy"]
    # same seed, same answer; and the saved parameters seed a refinement that cannot get worse
    code, again = run_cli(capsys, "optimize", "--config", cfg, "--out", tmp_path / "o2")
    assert (tmp_path / "o2" / "lucj_params.json").read_bytes() == saved.read_bytes()
    cfg2 = write_config(tmp_path / "o3.json", seed=4, system="toy.FCIDUMP",
                        optimize={"init": str(saved), "budget": 300})
    code, refined = run_cli(capsys, "optimize", "--config", cfg2, "--out", tmp_path / "o3")
    assert code == 0 and refined["energy"] <= rep["energy"] + 1e-10


def test_shadows_resume(tmp_path, capsys):
    cfg = write_config(tmp_path / "s.json", seed=2, shadows={"count": 300})
    code, rep = run_cli(capsys, "shadows", "--config", cfg, "--out", tmp_path / "a")
    assert code == 0 and rep["records"] == 300 and rep["header"]["ensemble"] == "Cn"
    first = (tmp_path / "a" / "shadows_b8_p0_s2.jsonl").read_bytes()
    cfg = write_config(tmp_path / "s.json", seed=2, shadows={"count": 600})
    run_cli(capsys, "shadows", "--config", cfg, "--out", tmp_path / "a")
    run_cli(capsys, "shadows", "--config", cfg, "--out", tmp_path / "b")
    resumed = (tmp_path / "a" / "shadows_b8_p0_s2.jsonl").read_bytes()
    assert resumed.startswith(first)
    assert resumed == (tmp_path / "b" / "shadows_b8_p0_s2.jsonl").read_bytes()


def test_qmc_exact_and_shadow(tmp_path, capsys):
    cfg = write_config(tmp_path / "q.json", seed=5, qmc=FAST_QMC, repeats=2)
    code, rep = run_cli(capsys, "qmc", "--config", cfg, "--out", tmp_path / "e")
    assert code == 0 and len(rep["runs"]) == 2 and [r["seed"] for r in rep["runs"]] == [5, 6]
    for run in rep["runs"]:
        g0 = run["gammas"][0]
        assert abs(g0["energy"] - g0["exact_fixed_node"]) < max(5 * g0["stderr"], 2e-4)
        assert run["extrapolated"]["from"] == [0.0, 0.1]
    assert set(rep["median_error_mha"]) == {"0.0", "0.1"}
    assert (tmp_path / "e" / "qmc_exact_s5_g0.1.csv").is_file()
    assert (tmp_path / "e" / "qmc_exact_s5_g0.json").is_file()

    cfg = write_config(tmp_path / "q2.json", seed=5, qmc=FAST_QMC, oracle="shadow", gammas=[0.0],
                       shadows={"ensemble": "Cpartitioned", "block_size": 4, "count": 2000})
    code, rep = run_cli(capsys, "qmc", "--config", cfg, "--out", tmp_path / "s")
    assert code == 0 and rep["oracle"] == "shadow"
    assert (tmp_path / "s" / "shadows_b4_p0_s5.jsonl").is_file()
    assert "extrapolated" not in rep["runs"][0]


def test_reruns_are_identical(tmp_path, capsys):
    cfg = write_config(tmp_path / "r.json", seed=8, qmc=FAST_QMC, oracle="shadow",
                       shadows={"count": 1000, "workers": 2})
    run_cli(capsys, "qmc", "--config", cfg, "--out", tmp_path / "x")
    first = (tmp_path / "x" / "qmc.json").read_bytes()
    archive = (tmp_path / "x" / "shadows_b8_p0_s8.jsonl").read_bytes()
    (tmp_path / "x" / "shadows_b8_p0_s8.jsonl").unlink()
    cfg1 = write_config(tmp_path / "r.json", seed=8, qmc=FAST_QMC, oracle="shadow",
                        shadows={"count": 1000, "workers": 1})
    run_cli(capsys, "qmc", "--config", cfg1, "--out", tmp_path / "x")
    assert (tmp_path / "x" / "shadows_b8_p0_s8.jsonl").read_bytes() == archive
    second = json.loads((tmp_path / "x" / "qmc.json").read_text())
    expect = json.loads(first)
    expect["config"]["shadows"]["workers"] = 1
    assert second == expect


def test_noise_sweep_columns(tmp_path, capsys):
    cfg = write_config(tmp_path / "n.json", seed=1, qmc=FAST_QMC,
                       shadows={"ensemble": "Cpartitioned", "block_size": 4, "count": 1500},
                       noise={"p_values": [0.0, 0.01], "run_qmc": True})
    code, rep = run_cli(capsys, "noise-sweep", "--config", cfg, "--out", tmp_path)
    assert code == 0 and [r["p"] for r in rep["rows"]] == [0.0, 0.01]
    with open(tmp_path / "noise_sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["p", "overlap_0", "overlap_1", "ratio", "magnitude_0", "magnitude_1", "gamma",
                             "energy", "stderr", "error_mha"]
    assert set(rep["power_law_fit"]) == {"abab", "baba"}
    assert (tmp_path / "shadows_b4_p0.01_s1.jsonl").is_file()


def test_power_law_fit():
    p = np.array([0.0, 0.001, 0.004, 0.016])
    fit = fit_power_law(p, 0.4 * (1 - p) ** 60)
    assert fit["a"] == pytest.approx(0.4, rel=1e-6) and fit["b"] == pytest.approx(60, rel=1e-5)
    assert np.isnan(fit_power_law([0.0], [1.0])["b"])


def test_default_fixture_is_packaged():
    assert default_fcidump().is_file()
