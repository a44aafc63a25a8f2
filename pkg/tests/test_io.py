from __future__ import annotations

import json

import numpy as np
import pytest

from qmonitor import ConfigError, JumpModel
from qmonitor.experiments import run_experiment
from qmonitor.grw import FlashEvent
from qmonitor.io import (parse_config, read_timeseries, write_flashes, write_results, write_summary,
                         write_timeseries)

QUBIT = {
    "experiment": "ensemble",
    "model": {
        "dim": 2,
        "hamiltonian": [[0, 0.5], [0.5, 0]],
        "channels": [{"operator": [[1, 0], [0, -1]], "coupling": 1.0}],
    },
    "initial": {"state": [1, 0]},
    "numerics": {"steps": 100},
    "ensemble": {"M": 50},
}


def _cfg(**changes):
    cfg = json.loads(json.dumps(QUBIT))
    for key, value in changes.items():
        cfg[key] = value
    return json.dumps(cfg)


def _errors(text, **kw):
    with pytest.raises(ConfigError) as info:
        parse_config(text, **kw)
    return info.value.errors


def test_minimal_config_gets_defaults():
    cfg = parse_config(_cfg())
    assert cfg.dt == 1e-3 and cfg.stride == 10 and cfg.seed == 0
    assert cfg.model.dim == 2 and cfg.steps == 100


def test_negative_coupling_names_field():
    bad = json.loads(_cfg())
    bad["model"]["channels"][0]["coupling"] = -1
    errs = _errors(json.dumps(bad))
    assert any("channels[0].coupling" in e for e in errs)


def test_lattice_and_operators_are_exclusive():
    errs = _errors(_cfg(lattice={"n_sites": 4}))
    assert any("mutually exclusive" in e for e in errs)


def test_all_errors_reported_together():
    bad = json.loads(_cfg())
    bad["numerics"] = {"steps": 0, "dt": -1}
    bad["ensemble"] = {"M": 1}
    errs = _errors(json.dumps(bad))
    assert {e.split(":")[0] for e in errs} >= {"numerics.steps", "numerics.dt", "ensemble.M"}


def test_json_syntax_error_has_position():
    errs = _errors('{"experiment": "me",\n  oops}')
    assert errs[0].startswith("line 2")


def test_non_hermitian_and_bad_state():
    bad = json.loads(_cfg())
    bad["model"]["hamiltonian"] = [[0, 1], [0, 0]]
    bad["initial"] = {"state": [1, 0, 0]}
    errs = _errors(json.dumps(bad))
    assert any(e.startswith("model.hamiltonian") for e in errs)
    assert any(e.startswith("initial.state") for e in errs)


def test_experiment_override_and_seed_override():
    assert _errors(_cfg(), experiment="me")[0].startswith("experiment")
    assert parse_config(_cfg(), seed=42).seed == 42


def test_fwt_decompositions_must_agree():
    cfg = json.loads(_cfg(experiment="fwt"))
    del cfg["initial"]
    cfg["decompositions"] = {"A": {"state": [1, 0]}, "B": {"state": [0, 1]}}
    errs = _errors(json.dumps(cfg))
    assert any("same density matrix" in e for e in errs)


def test_grw_config_builds_jump_model():
    cfg = parse_config(json.dumps({
        "experiment": "grw", "lattice": {"n_sites": 6}, "grw": {},
        "initial": {"state": {"sites": [[0], [3]]}}, "numerics": {"steps": 10},
        "ensemble": {"M": 4}}))
    assert isinstance(cfg.model, JumpModel)
    assert cfg.model.jump_rate == 1.0 and cfg.model.localization_width == 1.0


def test_empty_timeseries_is_header_only(tmp_path):
    write_timeseries(tmp_path / "t.csv", [])
    assert (tmp_path / "t.csv").read_text() == "time,observable,mean,se\n"


def test_timeseries_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(float(t), f"x{i}", float(m), float(s)) for i, (t, m, s) in enumerate(rng.random((20, 3)))]
    write_timeseries(tmp_path / "t.csv", rows)
    assert read_timeseries(tmp_path / "t.csv") == rows


def test_flash_csv(tmp_path):
    write_flashes(tmp_path / "f.csv", [FlashEvent(0.25, 0, 3, 1), FlashEvent(0.5, 1, 2, 0)])
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines == ["time,particle,center,trajectory", "0.5,1,2,0", "0.25,0,3,1"]


def test_summary_round_trip(tmp_path):
    doc = write_summary(tmp_path / "s.json", {"a": np.float64(0.1) / 3, "b": np.arange(3),
                                              "c": float("nan")})
    assert json.loads((tmp_path / "s.json").read_text()) == doc
    assert doc["c"] is None


def test_fwt_summary_has_verdict(tmp_path):
    cfg = json.loads(_cfg(experiment="fwt"))
    del cfg["initial"]
    s = 0.7071067811865476
    cfg["decompositions"] = {
        "A": {"decomposition": [{"weight": 0.5, "state": [1, 0]}, {"weight": 0.5, "state": [0, 1]}]},
        "B": {"decomposition": [{"weight": 0.5, "state": [s, s]}, {"weight": 0.5, "state": [s, -s]}]},
    }
    cfg["numerics"]["stride"] = 50
    cfg["ensemble"]["n_boot"] = 20
    paths = write_results(run_experiment(parse_config(json.dumps(cfg))), tmp_path)
    summary = json.loads(paths["summary"].read_text())
    assert summary["summary"]["verdict"] in {"tangible", "not_tangible", "inconclusive"}
    assert summary["experiment"] == "fwt" and summary["config"]["experiment"] == "fwt"
