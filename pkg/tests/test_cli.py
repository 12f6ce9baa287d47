import json

import numpy as np
import pytest

from twinbeam import cli, pipeline
from twinbeam import io as tio
from twinbeam.model import DetectorParams, SourceParams

B = ["--bootstrap", "100", "--quiet"]


def _config(path, **extra):
    cfg = {"source": {"n_mean_per_mode": 1.0, "matched_modes": 20000, "unmatched_modes_1": 1500,
                      "gain_jitter_rel_std": 0.002},
           "detectors": [{"efficiency": 0.9, "noise_var": 500.0},
                         {"efficiency": 0.88, "noise_var": 500.0}],
           "n_pulses": 20000, "seed": 3}
    cfg.update(extra)
    path.write_text(json.dumps(cfg))
    return str(path)


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def runs(tmp_path):
    cfg = _config(tmp_path / "cfg.json", conditioning=[{"q": 4}])
    paths = {}
    for kind in ("twin_beam", "coherent", "dark"):
        paths[kind] = str(tmp_path / f"{kind}.csv")
        assert cli.main(["simulate", "--config", cfg, "--kind", kind, "--out", paths[kind], "--quiet"]) == 0
    return cfg, paths


def test_simulate_writes_dataset_and_report(runs, tmp_path):
    cfg, paths = runs
    ds = tio.load_dataset(paths["twin_beam"])
    assert len(ds) == 20000 and ds.seed == 3
    rep = json.loads((tmp_path / "twin_beam.json").read_text())
    assert rep["inputs"]["dataset_digest"] == tio.dataset_digest(ds)
    assert rep["provenance"]["seed"] == 3


def test_seed_flag_overrides_config(runs, tmp_path):
    cfg, _ = runs
    out = str(tmp_path / "s.csv")
    assert cli.main(["simulate", "--config", cfg, "--seed", "99", "--out", out, "--quiet"]) == 0
    assert tio.load_dataset(out).seed == 99


def test_analyze_report_and_determinism(runs, tmp_path):
    cfg, p = runs
    args = ["analyze", p["twin_beam"], p["coherent"], p["dark"], "--config", cfg] + B
    assert cli.main(args + ["--out", str(tmp_path / "a1.json")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "a2.json")]) == 0
    r1 = json.loads((tmp_path / "a1.json").read_text())
    r2 = json.loads((tmp_path / "a2.json").read_text())
    for name in ("nrf_est", "nrf_raw", "fano1_est", "fano2_est", "fano1_conditional_theory"):
        e = r1["results"][name]
        assert e["std_error"] > 0 and e["n_samples"] == 20000
    assert "conditional[0]" in r1["results"]
    assert r1["provenance"]["determinism_hash"] == r2["provenance"]["determinism_hash"]
    assert pipeline.determinism_hash(r1) == r1["provenance"]["determinism_hash"]
    del r1["provenance"]["timestamp"], r2["provenance"]["timestamp"]
    assert r1 == r2


def test_persisted_runs_reproduce_in_memory_analysis(runs, tmp_path):
    cfg_path, p = runs
    cfg = tio.load_config(cfg_path)
    fresh = [pipeline.simulate_from_config(cfg, k) for k in ("twin_beam", "coherent", "dark")]
    mem = pipeline.analyze_datasets(fresh, B=100, cfg=cfg, seed=0)
    disk = pipeline.cmd_analyze([p["twin_beam"], p["coherent"], p["dark"]],
                                tmp_path / "d.json", B=100, cfg=cfg, seed=0)
    assert mem["results"] == disk["results"]
    assert mem["provenance"]["determinism_hash"] == disk["provenance"]["determinism_hash"]


def test_coherent_analysis_gives_unit_fano(tmp_path):
    cfg = _config(tmp_path / "c.json", kind="coherent", n_pulses=50000,
                  detectors=[{"efficiency": 0.9}, {"efficiency": 0.9}])
    out = str(tmp_path / "coh.csv")
    assert cli.main(["simulate", "--config", cfg, "--out", out, "--quiet"]) == 0
    assert cli.main(["analyze", out, "--out", str(tmp_path / "r.json")] + B) == 0
    res = json.loads((tmp_path / "r.json").read_text())["results"]
    for name in ("fano1", "fano2", "nrf"):
        assert abs(res[name]["value"] - 1.0) < 4 * res[name]["std_error"]


def test_missing_calibration_names_the_run(runs, tmp_path, capsys):
    _, p = runs
    code = cli.main(["analyze", p["twin_beam"], "--out", str(tmp_path / "x.json")] + B)
    assert code == cli.EXIT_VALIDITY
    rec = _err(capsys)
    assert rec["needed"] == "coherent" and "--kind coherent" in rec["message"]
    code = cli.main(["analyze", p["twin_beam"], p["coherent"], "--out", str(tmp_path / "x.json")] + B)
    assert code == cli.EXIT_VALIDITY
    assert _err(capsys)["needed"] == "dark"


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "none.json"), "--out", "x"]) == cli.EXIT_IO
    assert _err(capsys)["error"] == "FileNotFoundError"
    (tmp_path / "bad.json").write_text("{")
    assert cli.main(["simulate", "--config", str(tmp_path / "bad.json"), "--out", "x"]) == cli.EXIT_PARSE
    bad = _config(tmp_path / "e.json", detectors=[{"efficiency": 1.2}, {"efficiency": 0.9}])
    assert cli.main(["simulate", "--config", bad, "--out", "x"]) == cli.EXIT_CONFIG
    assert _err(capsys)["field"] == "detectors[0].efficiency"
    assert cli.main(["simulate", "--out", "x"]) == cli.EXIT_CONFIG
    (tmp_path / "junk.csv").write_text("hello\n")
    assert cli.main(["analyze", str(tmp_path / "junk.csv"), "--out", "x"]) == cli.EXIT_IO


def test_noise_above_shot_noise_is_a_validity_error(tmp_path, capsys):
    cfg = _config(tmp_path / "n.json", detectors=[{"efficiency": 0.9, "noise_var": 1e6},
                                                   {"efficiency": 0.9, "noise_var": 1e6}],
                  n_pulses=2000)
    outs = []
    for kind in ("twin_beam", "coherent", "dark"):
        outs.append(str(tmp_path / f"{kind}.csv"))
        cli.main(["simulate", "--config", cfg, "--kind", kind, "--out", outs[-1], "--quiet"])
    assert cli.main(["analyze", *outs, "--out", str(tmp_path / "r.json")] + B) == cli.EXIT_VALIDITY
    assert "shot-noise" in _err(capsys)["message"]


def test_condition_command(runs, tmp_path, capsys):
    _, p = runs
    out = tmp_path / "c.json"
    assert cli.main(["condition", p["twin_beam"], p["dark"], "--q", "4", "--out", str(out),
                     "--bootstrap", "100"]) == 0
    rep = json.loads(out.read_text())
    r = rep["results"]["conditional[0]"]
    assert r["spec"] == {"q": 4.0, "center": "control_mean", "level": 0.0}
    assert 0.18 < r["success_rate"] < 0.22
    assert "conditional[0].fano_target" in capsys.readouterr().out
    code = cli.main(["condition", p["twin_beam"], p["dark"], "--q", "1e7", "--out", str(out)] + B)
    assert code == cli.EXIT_VALIDITY


def test_sweep_output_feeds_fit(tmp_path):
    cfg = _config(tmp_path / "s.json", n_pulses=20000,
                  pump_sweep={"powers_mW": [36, 70, 126.3], "gain_coeff": 0.0894})
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "--config", cfg, "--out", str(out)] + B) == 0
    table = tio.read_table(out)
    assert list(table) == pipeline.PUMP_COLUMNS
    assert table["nrf"][0] < table["nrf"][-1]
    assert (tmp_path / "sweep.json").exists()
    fit_out = tmp_path / "fit.json"
    assert cli.main(["fit", str(out), "--out", str(fit_out), "--quiet"]) == 0
    res = json.loads(fit_out.read_text())["results"]
    assert {"fit", "alpha", "beta", "eta1"} <= set(res)
    assert 0.5 < res["eta1"]["eta1"]["value"] < 1.0


def test_q_and_center_sweeps(tmp_path):
    cfg = _config(tmp_path / "cfg_q.json")
    out = tmp_path / "q.csv"
    assert cli.main(["sweep", "--config", cfg, "--mode", "q", "--q-values", "2,8,1e7",
                     "--out", str(out)] + B) == 0
    t = tio.read_table(out)
    assert t["q"].tolist() == [2, 8, 1e7]
    assert t["success_rate"][0] > t["success_rate"][1]
    assert np.isnan(t["fano"][2]) and t["error"][2]
    out = tmp_path / "c.csv"
    assert cli.main(["sweep", "--config", cfg, "--mode", "center", "--q", "4",
                     "--out", str(out)] + B) == 0
    t = tio.read_table(out)
    assert t["delta_sd"].tolist() == [-0.5, -0.25, 0.0, 0.25, 0.5]
    assert np.all(np.diff(t["mean"]) > 0)


def test_sweep_without_pump_section_is_config_error(tmp_path, capsys):
    cfg = _config(tmp_path / "p.json")
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "s.csv")] + B) == cli.EXIT_CONFIG
    assert _err(capsys)["field"] == "pump_sweep"


def test_report_formats(runs, tmp_path, capsys):
    cfg, p = runs
    rep = tmp_path / "a.json"
    cli.main(["analyze", p["twin_beam"], p["coherent"], p["dark"], "--out", str(rep)] + B)
    capsys.readouterr()
    assert cli.main(["report", str(rep), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "name,value,std_error,n_samples"
    assert any(ln.startswith("nrf_est,") for ln in lines)
    assert cli.main(["report", str(rep), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out) == json.loads(rep.read_text())
    out = tmp_path / "r.csv"
    assert cli.main(["report", str(rep), "--format", "csv", "--out", str(out)]) == 0
    assert out.read_text().startswith("name,")
