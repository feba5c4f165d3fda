import json

import numpy as np
import pytest

from sheepdog.cli import main
from sheepdog.errors import GridMismatch, ParseError, ValidationError
from sheepdog.experiments import (
    RunOutputs,
    RunRecord,
    ScenarioConfig,
    compute_l2_com_error,
    config_from_dict,
    emit_outputs,
    load_config,
    make_initial_state,
    preset,
    run_scenario,
)
from sheepdog.model import ControlSignal, TimeGrid

SMALL = {"n_sheep": 3, "n_dogs": 1, "noise": 0.02, "T": 0.5, "dt": 0.05, "n_samples": 4, "z_des": [0.2, 0.2],
         "initial": {"dog_radius": 0.8}}


def small(mode, **extra):
    return config_from_dict({**SMALL, "mode": mode, **extra})


# configs ------------------------------------------------------------------------

def test_minimal_config_gets_fixed_defaults():
    cfg = config_from_dict({"n_sheep": 30, "n_dogs": 5, "noise": 0.02, "mode": "coarse-only"})
    assert (cfg.gamma, cfg.u_max, cfg.n_windows, cfg.eps_opt, cfg.dt, cfg.friction) == (1e-2, 5e-2, 20, 5e-3, 1e-2, 0.5)
    assert cfg.sheep_potential == {"c_r": 1.0, "c_a": 5e-4, "l_r": 2.0, "l_a": 1e-2}
    assert cfg.dog_potential == {"c_r": 1e-2, "c_a": 5e-4, "l_r": 0.5, "l_a": 1e-2}
    assert cfg.schema_version == 1


@pytest.mark.parametrize("key, value", [
    ("dt", -0.01), ("T", 0.0), ("gamma", -1.0), ("n_sheep", 0), ("mode", "nope"), ("noise", -0.1),
    ("armijo_shrink", 1.5), ("n_samples", 2.5), ("z_des", [1.0]), ("schema_version", 2), ("T", 0.123),
])
def test_invalid_field_is_named(key, value):
    with pytest.raises(ValidationError) as info:
        config_from_dict({"n_sheep": 3, "n_dogs": 1, "mode": "coarse-only", key: value})
    assert info.value.field == key
    assert key in str(info.value)


def test_missing_required_field():
    with pytest.raises(ValidationError) as info:
        config_from_dict({"n_sheep": 3, "mode": "coarse-only"})
    assert info.value.field == "n_dogs"


@pytest.mark.parametrize("extra, field", [
    ({"colour": "red"}, "colour"),
    ({"initial": {"foo": 1}}, "initial.foo"),
    ({"sheep_potential": {"c_x": 1}}, "sheep_potential.c_x"),
])
def test_unknown_keys_rejected(extra, field):
    with pytest.raises(ValidationError) as info:
        config_from_dict({"n_sheep": 3, "n_dogs": 1, "mode": "coarse-only", **extra})
    assert info.value.field == field


def test_nested_validation_names_field():
    with pytest.raises(ValidationError) as info:
        config_from_dict({**SMALL, "mode": "coarse-only", "initial": {"dog_radius": -1}})
    assert info.value.field == "initial.dog_radius"
    with pytest.raises(ValidationError) as info:
        config_from_dict({**SMALL, "mode": "coarse-only", "initial": {"sheep": [[0, 0]]}})
    assert info.value.field == "initial.sheep"


def test_horizon_geometry_validated():
    with pytest.raises(ValidationError) as info:
        small("receding-horizon", window_len=0.15)
    assert info.value.field == "window_len"


def test_round_trip(tmp_path):
    cfg = small("amcsm-open-loop", initial={"sheep": [[0, 0], [0.1, 0], [0, 0.1]], "dogs": "behind"},
                snapshot_times=[0.1])
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    back = load_config(path)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert cfg.replace(seed=3).seed == 3 and cfg.replace(seed=3).config_hash() != cfg.config_hash()


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_config(bad)
    with pytest.raises(ParseError):
        load_config(tmp_path / "missing.json")


def test_initial_state_generators():
    cfg = small("coarse-only", n_dogs=4, initial={"dog_radius": 2.0})
    y0 = make_initial_state(cfg)
    assert np.all(np.abs(y0.x) <= 0.5)
    np.testing.assert_allclose(np.linalg.norm(y0.a, axis=1), 2.0)
    np.testing.assert_array_equal(make_initial_state(cfg).x, y0.x)
    assert np.abs(make_initial_state(cfg.replace(seed=1)).x - y0.x).max() > 0
    behind = make_initial_state(small("coarse-only", n_dogs=2, initial={"dogs": "behind", "dog_radius": 1.0}))
    heading = np.array([0.2, 0.2]) - behind.center_of_mass()
    heading /= np.linalg.norm(heading)
    mid = behind.a.mean(axis=0)
    np.testing.assert_allclose(mid, behind.center_of_mass() - heading, atol=1e-12)


# presets ------------------------------------------------------------------------

# values fixed for every run of the shepherding study, and per-study settings
FIXED = {"gamma": 1e-2, "u_max": 5e-2, "n_windows": 20, "eps_opt": 5e-3, "dt": 1e-2, "friction": 0.5,
         "sheep_potential": {"c_r": 1.0, "c_a": 5e-4, "l_r": 2.0, "l_a": 1e-2},
         "dog_potential": {"c_r": 1e-2, "c_a": 5e-4, "l_r": 0.5, "l_a": 1e-2}}
SIGMA_STUDY = {"sigmas": [0.01, 0.02, 0.03, 0.04], "n_sheep": 30, "n_dogs": 5, "T": 20.0, "n_samples": 100,
               "accept_threshold": 0.3, "rel_gap_stop": 0.005}
DOG_STUDY = {"dogs": [1, 2, 3, 4, 5, 6], "n_sheep": 20, "noise": 0.01, "eps_sm": 0.5, "steering_tol": 0.05}
STAB_STUDY = {"T": 250.0, "gamma": 1e-3, "n_dogs": 5, "max_sm_iters": 2,
              "snapshot_times": (10.0, 25.0, 50.0, 75.0, 125.0, 250.0)}


def _check_fixed(cfg, skip=()):
    for k, v in FIXED.items():
        if k not in skip:
            assert getattr(cfg, k) == v, k


def test_sigma_preset_constants():
    runs = preset("sigma-sweep")
    assert [c.noise for _, c in runs] == SIGMA_STUDY["sigmas"]
    for _, c in runs:
        _check_fixed(c)
        for k in ("n_sheep", "n_dogs", "T", "n_samples", "accept_threshold", "rel_gap_stop"):
            assert getattr(c, k) == SIGMA_STUDY[k], k
        assert c.mode == "amcsm-open-loop"


def test_dog_preset_constants():
    runs = preset("dog-sweep")
    assert [c.n_dogs for _, c in runs] == DOG_STUDY["dogs"]
    for _, c in runs:
        _check_fixed(c)
        for k in ("n_sheep", "noise", "eps_sm", "steering_tol"):
            assert getattr(c, k) == DOG_STUDY[k], k
        assert c.mode == "receding-horizon"


def test_stabilization_preset_constants():
    [(_, c)] = preset("stabilization")
    _check_fixed(c, skip=("gamma",))
    for k, v in STAB_STUDY.items():
        assert getattr(c, k) == v, k


def test_unknown_preset():
    with pytest.raises(ValidationError):
        preset("nope")


# L2 error -----------------------------------------------------------------------

def test_l2_error_examples():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(201, 2))
    assert compute_l2_com_error(p, p, 0.01) == 0.0
    c = np.array([0.3, -0.4])
    assert compute_l2_com_error(p + c, p, 0.01) == pytest.approx(0.5 * np.sqrt(2.0), rel=1e-12)
    with pytest.raises(GridMismatch):
        compute_l2_com_error(p, p[:-1], 0.01)


def test_l2_error_grid_objects():
    g1 = TimeGrid(0, 0.1, 4)
    a = ControlSignal(np.zeros((4, 1, 2)), g1)
    b = ControlSignal(np.ones((4, 1, 2)), TimeGrid(0, 0.2, 4))
    with pytest.raises(GridMismatch):
        compute_l2_com_error(a, b)


# outputs ------------------------------------------------------------------------

def _record():
    return RunRecord("hash", "0.1", "coarse-only", "x", 0)


def test_empty_outputs_are_header_only(tmp_path):
    out = RunOutputs(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 3, 2)), None, [])
    manifest = emit_outputs(_record(), out, tmp_path, 2, 3)
    assert (tmp_path / "com.csv").read_text() == "t,com_1,com_2\n"
    assert (tmp_path / "dogs.csv").read_text().count(",") == 6
    assert (tmp_path / "controls.csv").read_text().startswith("t,u1_1,u1_2,u2_1")
    assert (tmp_path / "residuals.csv").read_text() == "sm_iter,residual\n"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["manifest"]) == set(manifest) == {"com.csv", "dogs.csv", "controls.csv", "residuals.csv"}


def test_run_outputs_schema_and_determinism(tmp_path):
    cfg = small("amcsm-open-loop", n_dogs=2)
    rec_a = run_scenario(cfg, tmp_path / "a")
    rec_b = run_scenario(cfg, tmp_path / "b")
    assert rec_a.status == "ok"
    for name in ("com.csv", "dogs.csv", "controls.csv", "residuals.csv", "com_coarse.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes(), name
        assert b"\r" not in a
    header = (tmp_path / "a" / "dogs.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 2 * 2
    rows = (tmp_path / "a" / "com.csv").read_text().splitlines()
    assert len(rows) == 1 + 11
    assert rec_a.manifest == rec_b.manifest
    assert rec_a.l2_error_deterministic is not None and len(rec_a.residuals) == rec_a.sm_iterations + 1


def test_receding_horizon_run(tmp_path):
    cfg = small("receding-horizon", T=1.0, n_windows=3, window_len=0.5, commit_len=0.25,
                snapshot_times=[0.0, 1.0])
    rec = run_scenario(cfg, tmp_path)
    assert rec.status == "ok" and rec.windows == 3
    assert (tmp_path / "residuals.csv").read_text().startswith("window,sm_iter,residual\n")
    snaps = (tmp_path / "snapshots.csv").read_text().splitlines()
    assert snaps[0] == "t,agent,index,x_1,x_2"
    assert len(snaps) == 1 + 2 * (3 + 1)


def test_numerical_failure_recorded(tmp_path):
    cfg = small("coarse-only", friction=1e308, initial={"sheep_velocities": [[1e10, 0], [0, 0], [0, 0]]})
    rec = run_scenario(cfg, tmp_path)
    assert rec.status == "failed" and "NonFiniteState" in rec.error
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "failed"


# CLI ----------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({**SMALL, "mode": "coarse-only"}))
    assert main(["run", "--config", str(good), "--output-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "summary.json").exists()

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**SMALL, "mode": "coarse-only", "dt": -1}))
    assert main(["run", "--config", str(bad)]) == 2
    assert "dt" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--preset", "nope"]) == 2
    assert main(["frobnicate"]) == 2

    boom = tmp_path / "boom.json"
    boom.write_text(json.dumps({**SMALL, "mode": "coarse-only", "friction": 1e308,
                                "initial": {"sheep_velocities": [[1e10, 0], [0, 0], [0, 0]]}}))
    assert main(["run", "--config", str(boom), "--output-dir", str(tmp_path / "b")]) == 3


def test_cli_overrides_and_presets(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({**SMALL, "mode": "amcsm-open-loop"}))
    assert main(["run", "--config", str(good), "--seed", "5", "--samples", "2",
                 "--output-dir", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["seed"] == 5
    capsys.readouterr()
    assert main(["presets"]) == 0
    assert capsys.readouterr().out.split() == ["sigma-sweep", "dog-sweep", "stabilization"]
    assert main(["presets", "--preset", "stabilization"]) == 0
    assert '"T": 250.0' in capsys.readouterr().out
    assert main(["run", "--preset", "sigma-sweep"]) == 2  # several scenarios need 'sweep'


def test_cli_sweep_writes_table(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "mode": "coarse-only", "label": "tiny"}))
    assert main(["sweep", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 0
    table = (tmp_path / "tiny" / "table.csv").read_text().splitlines()
    assert table[0].startswith("label,status,sm_iterations")
    assert table[1].startswith("tiny,ok")


def test_scenario_config_is_frozen():
    cfg = small("coarse-only")
    with pytest.raises(Exception):
        cfg.seed = 4
    assert isinstance(cfg, ScenarioConfig)
