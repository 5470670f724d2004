import json

import pytest

from pertrl.cli import main
from pertrl.config import EXPERIMENTS, load_config, parse_config, validate
from pertrl.errors import ConfigError


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.parametrize("exp", EXPERIMENTS)
def test_defaults_validate(tmp_path, exp):
    assert validate(write(tmp_path, {"experiment": exp, "master_seed": 0})) == []


def test_bad_beta_named():
    with pytest.raises(ConfigError, match=r"beta out of \(0,1\)"):
        parse_config({"experiment": "ppe", "master_seed": 1, "ppe": {"beta": 1.2}})


def test_small_R_names_grid_point():
    with pytest.raises(ConfigError) as ei:
        parse_config({"experiment": "rl-pe", "master_seed": 1, "estimator": {"M": [6, 18], "R": [10, 1000]}})
    assert ei.value.problems == ["estimator.R[0]=10 < basis size 18 at grid point M[1]=18"]


def test_all_problems_reported():
    with pytest.raises(ConfigError) as ei:
        parse_config({"experiment": "tpfc", "master_seed": -1, "tpfc": {"r": 0, "bogus": 1}, "system": {"dt": "x"}})
    msgs = " | ".join(ei.value.problems)
    for needle in ("master_seed", "tpfc.r", "tpfc.bogus: unknown field", "system.dt"):
        assert needle in msgs


def test_missing_seed_and_unknown_experiment():
    with pytest.raises(ConfigError, match="master_seed: required"):
        parse_config({"experiment": "ppe"})
    with pytest.raises(ConfigError, match="unknown experiment"):
        parse_config({"experiment": "nope", "master_seed": 0})


def test_experiment_mismatch(tmp_path):
    p = write(tmp_path, {"experiment": "ppe", "master_seed": 0})
    with pytest.raises(ConfigError, match="config says"):
        load_config(p, "tpfc")


def test_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    assert "invalid JSON" in validate(p)[0]


def test_exit_code_config_error(tmp_path, capsys):
    p = write(tmp_path, {"experiment": "ppe", "master_seed": 0, "ppe": {"beta": 2}})
    assert main(["ppe", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "beta out of (0,1)" in capsys.readouterr().err
    assert main(["validate", "--config", str(p)]) == 2


def test_exit_code_refusal(tmp_path):
    doc = {"experiment": "rl-pe", "master_seed": 0,
           "estimator": {"M": [18], "sigma_X": [1.0], "R": [40], "n_seeds": 1, "on_refusal": "fail"}}
    assert main(["rl-pe", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path)]) == 3


def test_refusal_recorded_by_default(tmp_path):
    doc = {"experiment": "rl-pe", "master_seed": 0,
           "estimator": {"M": [18], "sigma_X": [1.0], "R": [40], "n_seeds": 2}}
    assert main(["rl-pe", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path), "--reproducible"]) == 0
    text = (tmp_path / "rl-pe.csv").read_text()
    assert "n_refused,2," in text


def test_exit_code_divergence(tmp_path):
    doc = {"experiment": "tpfc", "master_seed": 0, "tpfc": {"fbar": [0, 0, 0, 5.0], "x0": 20.0, "T": 50}}
    assert main(["tpfc", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path)]) == 4


def test_exact_pe_outputs(tmp_path):
    p = write(tmp_path, {"experiment": "exact-pe", "master_seed": 0})
    assert main(["exact-pe", "--config", str(p), "--out", str(tmp_path / "o"), "--reproducible"]) == 0
    doc = json.loads((tmp_path / "o" / "exact-pe.json").read_text())
    coeffs = doc["summary"]["ladder"]["coefficients"][2]
    assert coeffs[2] == pytest.approx(18.1) and coeffs[4] == pytest.approx(1.8) and coeffs[6] == pytest.approx(0.1)
    csv = (tmp_path / "o" / "exact-pe.csv").read_text()
    assert "generated_at" not in csv
    assert "exact-pe,t=2;power=2,coefficient,18.1," in csv


def test_timestamp_without_reproducible(tmp_path):
    p = write(tmp_path, {"experiment": "exact-pe", "master_seed": 0})
    assert main(["exact-pe", "--config", str(p), "--out", str(tmp_path)]) == 0
    assert "# generated_at:" in (tmp_path / "exact-pe.csv").read_text()


def test_threads_do_not_change_output(tmp_path):
    doc = {"experiment": "variance-sweep", "master_seed": 4, "estimator": {"M": [1, 2], "sigma_X": [1.0], "R": [500], "n_seeds": 20}}
    p = write(tmp_path, doc)
    main(["variance-sweep", "--config", str(p), "--out", str(tmp_path / "a"), "--reproducible", "--threads", "1"])
    main(["variance-sweep", "--config", str(p), "--out", str(tmp_path / "b"), "--reproducible", "--threads", "4"])
    assert (tmp_path / "a" / "variance-sweep.csv").read_bytes() == (tmp_path / "b" / "variance-sweep.csv").read_bytes()
