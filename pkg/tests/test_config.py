import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sicmag.config import ConfigError, RunConfig, apply_env, load_config, normalize, sweep_values

RAMSEY = {"seed": 1,
          "relaxation": {"t1_s": 157e-6, "t2_s": 2.8e-6},
          "protocol": {"kind": "ramsey", "sweep_s": {"start": 0.0, "stop": 1e-6, "num": 11},
                       "detuning_hz": 5e6, "b1_t": 400e-6},
          "ensemble": {"t2_star_s": 230e-9, "n": 16}}


def test_normalize_fills_defaults_and_is_idempotent():
    a = normalize(RAMSEY)
    assert a["spin"]["d_hz"] == 35e6 and a["noise"]["shots"] == 0
    assert normalize(a) == a


@pytest.mark.parametrize("raw, match", [
    ({"bogus": 1}, "bogus: unknown key"),
    ({"spin": {"b0": 1e-4}}, "spin.b0: unknown key"),
    ({"spin": {"b0_t": "x"}}, "spin.b0_t: expected"),
    ({"spin": {"b0_t": True}}, "spin.b0_t: expected"),
    ({"spin": []}, "spin: expected an object"),
    ({"ensemble": {"n": 1.5}}, "ensemble.n: expected int"),
    ({"ensemble": {"n": 0}}, "ensemble.n"),
    ({"relaxation": {"t1_s": 1e-4}}, "together"),
    ({"relaxation": {"t1_s": 1e-4, "t2_s": 1e-6, "alpha_per_s": 1.0, "beta_per_s": 1.0}}, "either"),
    ({"ensemble": {"detuning_hwhm_hz": 1e5, "t2_star_s": 1e-7}}, "either"),
    ({"seed": -1}, "seed"),
    ({"protocol": {"kind": "cpmg"}}, "protocol.kind"),
    ({"protocol": {"kind": "t1"}}, "protocol.sweep_s: required"),
    ({"protocol": {"kind": "t1", "sweep_s": [1e-6], "sweep_hz": [1.0]}}, "protocol.sweep_hz"),
    ({"noise": {"shots": -1}}, "noise.shots"),
    ([1, 2], "top level"),
])
def test_normalize_errors_name_the_field(raw, match):
    with pytest.raises(ConfigError, match=match):
        normalize(raw)


def test_builder_errors_are_config_errors():
    with pytest.raises(ConfigError, match="spin"):
        RunConfig.from_dict({"spin": {"d_hz": -1.0}})
    with pytest.raises(ConfigError, match="ensemble"):
        RunConfig.from_dict({"ensemble": {"method": "grid"}})
    with pytest.raises(ConfigError, match="protocol.sweep_s"):
        RunConfig.from_dict({"protocol": {"kind": "t1", "sweep_s": [2e-6, 1e-6]}})


def test_sweep_values():
    np.testing.assert_array_equal(sweep_values([1, 2, 3]), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(sweep_values({"start": 0, "stop": 1, "num": 5}), np.linspace(0, 1, 5))
    for bad in ([], [1, 1], ["a"], {"start": 0, "stop": 1}, {"start": 0, "stop": 1, "num": 0},
                {"start": 0, "stop": 1, "num": 2.0}):
        with pytest.raises(ConfigError):
            sweep_values(bad)


def test_env_override():
    env = {"SICMAG_SPIN__B0_T": "2.5e-4", "SICMAG_SEED": "7", "SICMAG_EMISSION__MODE": "phenomenological",
           "OTHER": "x"}
    raw = apply_env(RAMSEY, env)
    assert raw["spin"]["b0_t"] == 2.5e-4 and raw["seed"] == 7 and raw["emission"]["mode"] == "phenomenological"
    assert RAMSEY["seed"] == 1  # input untouched
    with pytest.raises(ConfigError, match="SECTION__KEY"):
        apply_env({}, {"SICMAG_A__B__C": "1"})
    with pytest.raises(ConfigError, match="not a section"):
        apply_env({"seed": 1}, {"SICMAG_SEED__X": "1"})


def test_load_config_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "seed": 1,\n  "spin": {"b0_t": }\n}\n')
    with pytest.raises(ConfigError, match=r"line 3, column"):
        load_config(p, environ={})
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json", environ={})


def test_load_config_with_env(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(RAMSEY))
    cfg = load_config(p, environ={"SICMAG_PROTOCOL__DETUNING_HZ": "3e6"})
    assert cfg["protocol"]["detuning_hz"] == 3e6
    assert load_config(environ={}).kind is None


def test_round_trip_and_equality():
    cfg = RunConfig.from_dict(RAMSEY)
    back = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert back == cfg and hash(back) == hash(cfg)
    assert cfg.with_overrides(seed=2) != cfg
    assert cfg.with_overrides(seed=None) == cfg
    assert cfg.with_frame("lab")["evolution"]["frame"] == "lab"


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1e-3), st.integers(0, 2 ** 63), st.sampled_from(["rotating", "lab"]))
def test_round_trip_property(b0, seed, frame):
    cfg = RunConfig.from_dict({"seed": seed, "spin": {"b0_t": b0}, "evolution": {"frame": frame}})
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_builders():
    cfg = RunConfig.from_dict(RAMSEY)
    exp = cfg.experiment()
    assert exp.ensemble.n == 16
    assert exp.ensemble.detuning.hwhm_hz == pytest.approx(1 / (2 * np.pi * 230e-9))
    assert exp.model.relaxation.alpha == pytest.approx(2123.1, rel=1e-3)
    plan = cfg.plan()
    assert len(plan.values) == 11 and plan.detuning_hz == 5e6
    assert not cfg.stochastic
    assert RunConfig.from_dict({**RAMSEY, "noise": {"shots": 5}}).stochastic
    inp = cfg.sensitivity_inputs()
    assert inp.n_ramsey == 1.21e6 and inp.n_hahn == 2.3e5
