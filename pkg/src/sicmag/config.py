"""
Run configuration: a JSON document with unit-suffixed keys, validated and
normalized against a schema, plus builders for the simulation objects.

Any key can be overridden from the environment as
``SICMAG_<SECTION>__<KEY>=<value>`` (``SICMAG_SEED=<value>`` for top-level
keys); values are parsed as JSON when possible and taken as strings
otherwise.
"""

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np

from .constants import GAMMA_HZ_PER_T
from .experiment import Ensemble, Experiment
from .lindblad import (EvolutionSettings, LorentzianDetuning, RelaxationParams, UniformScale, V2Model,
                       V2Rates, alpha_beta_from_times)
from .protocols import KINDS, SweepPlan
from .readout import DetectorConfig, EmissionModel
from .sensitivity import SensitivityInputs
from .spin import HamiltonianParams

ENV_PREFIX = "SICMAG_"
FREQ_KINDS = ("cw_odmr", "pulsed_odmr")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


_NUM = (int, float)
_OPT = object()  # marker: optional key without default

# section -> key -> (allowed types, default). A default of _OPT means the
# key may be absent; None is a legal explicit value only where listed.
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "spin": {"d_hz": (_NUM, 35e6), "b0_t": (_NUM, 0.0), "gamma_hz_per_t": (_NUM, GAMMA_HZ_PER_T)},
    "relaxation": {"t1_s": (_NUM, _OPT), "t2_s": (_NUM, _OPT),
                   "alpha_per_s": (_NUM, _OPT), "beta_per_s": (_NUM, _OPT)},
    "rates": {"pump_per_s": (_NUM, V2Rates.pump), "radiative_per_s": (_NUM, V2Rates.radiative),
              "isc_half_per_s": (_NUM, V2Rates.isc_half),
              "isc_three_half_per_s": (_NUM, V2Rates.isc_three_half),
              "ms_to_half_per_s": (_NUM, V2Rates.ms_to_half),
              "ms_to_three_half_per_s": (_NUM, V2Rates.ms_to_three_half),
              "reference_power_w": (_NUM, 36e-3)},
    "emission": {"mode": (str, "rate"), "r0_per_s": (_NUM, 1e9), "contrast_c": (_NUM, 0.006),
                 "n_centers": (_NUM, 1.0)},
    "detector": {"collection_efficiency": (_NUM, 0.01), "responsivity_a_per_w": (_NUM, 0.5),
                 "wavelength_m": (_NUM, 916e-9), "tia_gain_v_per_a": (_NUM, 1e7),
                 "bandwidth_hz": (_NUM, 100e3), "sample_rate_hz": (_NUM, 1e6),
                 "dark_rate_per_s": (_NUM, 0.0)},
    "protocol": {"kind": (str, _OPT), "sweep_hz": ((list, dict), _OPT), "sweep_s": ((list, dict), _OPT),
                 "t_i_s": (_NUM, 12e-6), "t_r_s": (_NUM, 12e-6), "b1_t": (_NUM, 41.9e-6),
                 "f_drive_hz": (_NUM, 70e6), "detuning_hz": (_NUM, _OPT), "final_phase": (str, _OPT),
                 "laser_w": (_NUM, 36e-3), "readout_s": (_NUM, 2e-6), "t_wait_s": (_NUM, 0.0),
                 "t_pi_s": (_NUM, _OPT)},
    "ensemble": {"detuning_hwhm_hz": (_NUM, _OPT), "t2_star_s": (_NUM, _OPT), "b1_spread": (_NUM, 0.0),
                 "n": (int, 1), "method": (str, "quadrature")},
    "evolution": {"method": (str, "expm"), "frame": (str, "rotating"), "dt_max_s": (_NUM, 1e-9),
                  "rel_tol": (_NUM, 1e-9), "abs_tol": (_NUM, 1e-12)},
    "noise": {"shots": (int, 0), "integration_s": (_NUM, 1e-3)},
    "output": {"traces": (bool, False)},
    "sensitivity": {"c": (_NUM, 0.006), "r_per_s": (_NUM, 1e12), "n": (_NUM, 1.08e6),
                    "delta_nu_hz": (_NUM, 10e6), "t2_star_s": (_NUM, 230e-9), "t2_s": (_NUM, 2.8e-6),
                    "t_i_s": (_NUM, 12e-6), "t_r_s": (_NUM, 12e-6), "tau_s": (_NUM, _OPT),
                    "p": (_NUM, 1.0), "delta_ms": (int, 1), "g_e": (_NUM, 2.0028),
                    "n_ramsey": (_NUM, 1.21e6), "n_hahn": (_NUM, 2.3e5)},
}
TOP_LEVEL = {"seed": (int, _OPT), "out_dir": (str, _OPT)}


def _type_ok(v, types) -> bool:
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(v, bool) and bool not in types:
        return False
    return isinstance(v, types)


def _check(path: str, v, types):
    if not _type_ok(v, types):
        names = "/".join(t.__name__ for t in (types if isinstance(types, tuple) else (types,)))
        raise ConfigError(f"{path}: expected {names}, got {type(v).__name__} {v!r}")
    if isinstance(v, float) and not np.isfinite(v):
        raise ConfigError(f"{path}: must be finite, got {v!r}")


def normalize(raw: Mapping[str, Any]) -> Dict[str, Any]:
    """Validate keys and types and fill defaults. Idempotent."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config: top level must be a JSON object")
    out: Dict[str, Any] = {}
    for key in raw:
        if key not in SCHEMA and key not in TOP_LEVEL:
            raise ConfigError(f"{key}: unknown key; expected one of {sorted([*SCHEMA, *TOP_LEVEL])}")
    for key, (types, default) in TOP_LEVEL.items():
        if key in raw and raw[key] is not None:
            _check(key, raw[key], types)
            out[key] = raw[key]
    for sec, fields in SCHEMA.items():
        given = raw.get(sec, {})
        if not isinstance(given, Mapping):
            raise ConfigError(f"{sec}: expected an object, got {type(given).__name__}")
        for k in given:
            if k not in fields:
                raise ConfigError(f"{sec}.{k}: unknown key; expected one of {sorted(fields)}")
        norm = {}
        for k, (types, default) in fields.items():
            if k in given and given[k] is not None:
                _check(f"{sec}.{k}", given[k], types)
                norm[k] = copy.deepcopy(given[k])
            elif default is not _OPT:
                norm[k] = default
        out[sec] = norm
    _validate(out)
    return out


def _validate(cfg):
    rel = cfg["relaxation"]
    times = "t1_s" in rel or "t2_s" in rel
    rates = "alpha_per_s" in rel or "beta_per_s" in rel
    if times and rates:
        raise ConfigError("relaxation: give either (t1_s, t2_s) or (alpha_per_s, beta_per_s), not both")
    if times and not ("t1_s" in rel and "t2_s" in rel):
        raise ConfigError("relaxation: t1_s and t2_s must be given together")
    if rates and not ("alpha_per_s" in rel and "beta_per_s" in rel):
        raise ConfigError("relaxation: alpha_per_s and beta_per_s must be given together")
    ens = cfg["ensemble"]
    if "detuning_hwhm_hz" in ens and "t2_star_s" in ens:
        raise ConfigError("ensemble: give either detuning_hwhm_hz or t2_star_s, not both")
    if ens["n"] < 1:
        raise ConfigError("ensemble.n: must be >= 1")
    if cfg["noise"]["shots"] < 0:
        raise ConfigError("noise.shots: must be >= 0")
    if "seed" in cfg and not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    proto = cfg["protocol"]
    if "kind" in proto:
        kind = proto["kind"]
        if kind not in KINDS:
            raise ConfigError(f"protocol.kind: unknown protocol {kind!r}; expected one of {KINDS}")
        want, other = ("sweep_hz", "sweep_s") if kind in FREQ_KINDS else ("sweep_s", "sweep_hz")
        if other in proto:
            raise ConfigError(f"protocol.{other}: {kind} sweeps use {want}")
        if want not in proto:
            raise ConfigError(f"protocol.{want}: required for {kind}")
        sweep_values(proto[want], f"protocol.{want}")


def sweep_values(spec, path: str = "sweep") -> np.ndarray:
    """Explicit list, or {"start", "stop", "num"} for an even grid."""
    if isinstance(spec, list):
        if not spec or not all(_type_ok(v, _NUM) for v in spec):
            raise ConfigError(f"{path}: expected a non-empty list of numbers")
        v = np.asarray(spec, dtype=float)
    else:
        if set(spec) != {"start", "stop", "num"}:
            raise ConfigError(f"{path}: grid form needs exactly start, stop, num")
        if not (_type_ok(spec["start"], _NUM) and _type_ok(spec["stop"], _NUM) and _type_ok(spec["num"], int)):
            raise ConfigError(f"{path}: start/stop must be numbers and num an integer")
        if spec["num"] < 1:
            raise ConfigError(f"{path}.num: must be >= 1")
        v = np.linspace(spec["start"], spec["stop"], spec["num"])
    if np.any(np.diff(v) <= 0):
        raise ConfigError(f"{path}: values must be strictly increasing")
    return v


def apply_env(raw: Dict[str, Any], environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Copy of `raw` with SICMAG_* environment overrides applied."""
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(dict(raw))
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        text = environ[name]
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        if len(path) == 1:
            out[path[0]] = value
        elif len(path) == 2:
            sec = out.setdefault(path[0], {})
            if not isinstance(sec, dict):
                raise ConfigError(f"{name}: {path[0]} is not a section")
            sec[path[1]] = value
        else:
            raise ConfigError(f"{name}: override names take the form {ENV_PREFIX}SECTION__KEY")
    return out


def load_config(path=None, environ: Optional[Mapping[str, str]] = None) -> "RunConfig":
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return RunConfig.from_dict(apply_env(raw, environ))


@dataclass(frozen=True)
class RunConfig:
    data: Dict[str, Any]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(self.to_json())

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        cfg = cls(normalize(raw))
        cfg.build()  # surface constructor errors at load time
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> Optional[int]:
        return self.data.get("seed")

    @property
    def kind(self) -> Optional[str]:
        return self.data["protocol"].get("kind")

    @property
    def stochastic(self) -> bool:
        return self.data["noise"]["shots"] > 0 or self.data["ensemble"]["method"] == "monte_carlo"

    def with_overrides(self, **top) -> "RunConfig":
        d = self.to_dict()
        for k, v in top.items():
            if v is not None:
                d[k] = v
        return RunConfig.from_dict(d)

    def with_frame(self, frame: Optional[str]) -> "RunConfig":
        if frame is None:
            return self
        d = self.to_dict()
        d["evolution"]["frame"] = frame
        return RunConfig.from_dict(d)

    # -- builders -----------------------------------------------------------

    def build(self):
        """Construct every object once so invalid values raise ConfigError."""
        self.experiment()
        self.sensitivity_inputs()
        if self.kind is not None:
            self.plan()

    def _section(self, name, fn):
        try:
            return fn(self.data[name])
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{name}: {exc}") from None

    def relaxation(self) -> RelaxationParams:
        def make(r):
            if "t1_s" in r:
                return alpha_beta_from_times(r["t1_s"], r["t2_s"])
            if "alpha_per_s" in r:
                return RelaxationParams(r["alpha_per_s"], r["beta_per_s"])
            return RelaxationParams()
        return self._section("relaxation", make)

    def model(self) -> V2Model:
        spin = self._section("spin", lambda s: HamiltonianParams(s["d_hz"], s["gamma_hz_per_t"], s["b0_t"]))
        rates = self._section("rates", lambda r: V2Rates(
            r["pump_per_s"], r["radiative_per_s"], r["isc_half_per_s"], r["isc_three_half_per_s"],
            r["ms_to_half_per_s"], r["ms_to_three_half_per_s"]).rate_set(reference_power_w=r["reference_power_w"]))
        return V2Model(spin=spin, rates=rates, relaxation=self.relaxation())

    def experiment(self) -> Experiment:
        r = self.data["rates"]
        radiative = r["radiative_per_s"]

        def emission(e):
            return EmissionModel(EmissionModel.default_rates(V2Rates(radiative=radiative)), e["mode"],
                                 e["r0_per_s"], e["contrast_c"], e["n_centers"])

        em = self._section("emission", emission)
        det = self._section("detector", lambda d: DetectorConfig(
            d["collection_efficiency"], d["responsivity_a_per_w"], d["wavelength_m"], d["tia_gain_v_per_a"],
            d["bandwidth_hz"], d["sample_rate_hz"], d["dark_rate_per_s"]))
        ev = self._section("evolution", lambda e: EvolutionSettings(
            e["method"], e["dt_max_s"], e["rel_tol"], e["abs_tol"], e["frame"]))

        def ensemble(e):
            if e["method"] not in ("quadrature", "monte_carlo"):
                raise ValueError(f"method must be quadrature or monte_carlo, got {e['method']!r}")
            hw = e.get("detuning_hwhm_hz")
            if "t2_star_s" in e:
                if not e["t2_star_s"] > 0:
                    raise ValueError("t2_star_s must be > 0")
                hw = 1.0 / (2.0 * np.pi * e["t2_star_s"])
            if hw is not None and hw < 0:
                raise ValueError("detuning_hwhm_hz must be >= 0")
            det_dist = LorentzianDetuning(hw) if hw else None
            b1 = UniformScale(e["b1_spread"]) if e["b1_spread"] else None
            return Ensemble(det_dist, b1, e["n"], e["method"], self.seed)

        ens = self._section("ensemble", ensemble)
        init_w = self.data["protocol"]["laser_w"]
        return Experiment(self.model(), em, det, ev, ens, init_w)

    def plan(self) -> SweepPlan:
        p = self.data["protocol"]
        if "kind" not in p:
            raise ConfigError("protocol.kind: required for simulate")
        key = "sweep_hz" if p["kind"] in FREQ_KINDS else "sweep_s"
        values = sweep_values(p[key], f"protocol.{key}")
        return self._section("protocol", lambda q: SweepPlan(
            tuple(values), q["t_i_s"], q["t_r_s"], q["b1_t"], q["f_drive_hz"], q.get("detuning_hz"),
            q.get("final_phase"), q["laser_w"], q["readout_s"], self.data["spin"]["gamma_hz_per_t"],
            q.get("t_pi_s"), q["t_wait_s"]))

    def sensitivity_inputs(self) -> SensitivityInputs:
        return self._section("sensitivity", lambda s: SensitivityInputs(
            s["c"], s["r_per_s"], s["n"], s["delta_nu_hz"], s["t2_star_s"], s["t2_s"], s["t_i_s"],
            s["t_r_s"], s.get("tau_s"), s["p"], s["delta_ms"], s["g_e"], s["n_ramsey"], s["n_hahn"]))
