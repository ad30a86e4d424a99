"""Layered run configuration: built-in defaults, then a TOML file, then flags.

Keys are dotted (``module.pendulum_mass_kg``) and use millimetres and degrees
where the name says so; :class:`ResolvedConfig` converts to SI when building
model objects. Every resolved value is echoed into a manifest together with
the layer it came from.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .control import SetpointProfile
from .dynamics import ContactParams, FrictionParams, MotorParams
from .errors import ConfigError, DiskbotError
from .linmodel import DEFAULT_GAINS, DEFAULT_PARAMS, ModuleParams, PDGains
from .magnetics import PRESETS, REPORTED_FORCE
from . import scenarios as sc

_NUM = (int, float)

# key -> default. Types follow the default (numbers accept int or float).
DEFAULTS: dict[str, Any] = {
    "module.shell_mass_kg": DEFAULT_PARAMS.M,
    "module.pendulum_mass_kg": DEFAULT_PARAMS.m,
    "module.arm_length_mm": DEFAULT_PARAMS.l * 1e3,
    "module.pendulum_inertia_kg_m2": DEFAULT_PARAMS.I,
    "module.damping_n_s_per_m": ModuleParams().b,
    "module.shell_radius_mm": ModuleParams().r * 1e3,
    "module.gravity_m_s2": DEFAULT_PARAMS.g,
    "gains.kp": DEFAULT_GAINS.kp,
    "gains.kd": DEFAULT_GAINS.kd,
    "magnet.preset": "H-reversed",
    "magnet.contact_force_n": REPORTED_FORCE,
    "magnet.force_scale": 1.0,
    "friction.mu_s": FrictionParams().mu_s,
    "friction.mu_k": FrictionParams().mu_k,
    "friction.mu_disk": FrictionParams().mu_disk,
    "friction.v_eps_m_s": FrictionParams().v_eps,
    "friction.v_reg_m_s": FrictionParams().v_reg,
    "sim.dt_s": 1e-4,
    "sim.servo_gain_nm_s": MotorParams().gain,
    "sim.servo_max_torque_nm": MotorParams().max_torque,
    "sim.hard_stop_deg": sc.HARD_STOP_DEG,
    "sim.contact_stiffness_n_per_m": ContactParams().stiffness,
    "sim.contact_damping_n_s_per_m": ContactParams().damping,
    "scenario.pendulum.step_deg": sc.STEP_DEG,
    "scenario.pendulum.interval_s": sc.STEP_INTERVAL,
    "scenario.pendulum.duration_s": 1.0 + 4 * sc.STEP_INTERVAL,
    "scenario.pendulum.profile": [],
    "scenario.coupling.start_gap_mm": sc.COUPLING_START_GAP * 1e3,
    "scenario.coupling.offset_deg": sc.COUPLING_OFFSET_DEG,
    "scenario.coupling.duration_s": 8.0,
    "scenario.joint.drive_speed_rad_s": sc.JOINT_DRIVE_SPEED,
    "scenario.joint.duration_s": 10.0,
    "scenario.joint.magnet_scale": 1.0,
    "scenario.spin.speed_rad_s": sc.SPIN_SPEED,
    "scenario.spin.duration_s": 5.0,
    "scenario.balance.tilt_deg": sc.BALANCE_INITIAL_TILT_DEG,
    "scenario.balance.duration_s": 10.0,
}

DEFAULT_OUT = "diskbot_out"
OUT_ENV = "DISKBOT_OUT"


def _flatten(table: Mapping, prefix: str = "") -> dict:
    out = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping) and name not in DEFAULTS:
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, _NUM):
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, list)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")
    return value


def parse_flag_value(key: str, text: str):
    """Turn a ``--set key=value`` string into a typed value."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown configuration key: {key}")
    default = DEFAULTS[key]
    if isinstance(default, str):
        return text
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r}") from exc


class ResolvedConfig:
    """Fully resolved parameter snapshot plus the layer each value came from."""

    def __init__(self, values: dict, layers: dict, path: Optional[str]):
        self.values = values
        self.layers = layers
        self.path = path

    def __getitem__(self, key):
        return self.values[key]

    # -- model objects -----------------------------------------------------
    def module_params(self) -> ModuleParams:
        v = self.values
        return ModuleParams(M=v["module.shell_mass_kg"], m=v["module.pendulum_mass_kg"],
                            l=v["module.arm_length_mm"] * 1e-3, I=v["module.pendulum_inertia_kg_m2"],
                            b=v["module.damping_n_s_per_m"], r=v["module.shell_radius_mm"] * 1e-3,
                            g=v["module.gravity_m_s2"])

    def gains(self) -> PDGains:
        return PDGains(self.values["gains.kp"], self.values["gains.kd"])

    def friction(self) -> FrictionParams:
        v = self.values
        return FrictionParams(v["friction.mu_s"], v["friction.mu_k"], v["friction.mu_disk"],
                              v["friction.v_eps_m_s"], v["friction.v_reg_m_s"])

    def motor(self, hard_stop: bool) -> MotorParams:
        v = self.values
        stop = math.radians(v["sim.hard_stop_deg"]) if hard_stop else 0.0
        return MotorParams(v["sim.servo_gain_nm_s"], v["sim.servo_max_torque_nm"], stop)

    def contact(self) -> ContactParams:
        v = self.values
        return ContactParams(v["sim.contact_stiffness_n_per_m"], v["sim.contact_damping_n_s_per_m"])

    def scenario(self, name: str) -> sc.Scenario:
        """Build a scenario from the resolved values."""
        v = self.values
        p = self.module_params()
        g = self.gains()
        dt = v["sim.dt_s"]
        pre = f"scenario.{name}."
        if name == "pendulum":
            prof = v[pre + "profile"]
            profile = SetpointProfile.from_config(prof) if prof else None
            scen = sc.scenario_pendulum(p, g, v[pre + "step_deg"], v[pre + "interval_s"], dt=dt,
                                        profile=profile, duration=v[pre + "duration_s"])
        elif name == "coupling":
            scen = sc.scenario_coupling(p, g, v[pre + "start_gap_mm"] * 1e-3, v[pre + "offset_deg"],
                                        v[pre + "duration_s"], dt=dt)
        elif name == "joint":
            scen = sc.scenario_joint(p, v[pre + "drive_speed_rad_s"], v[pre + "duration_s"],
                                     v[pre + "magnet_scale"], dt=dt)
        elif name == "spin":
            scen = sc.scenario_spin("both", p, v[pre + "speed_rad_s"], v[pre + "duration_s"], dt=dt)
        elif name == "balance":
            scen = sc.scenario_balance(p, g, v[pre + "tilt_deg"], v[pre + "duration_s"], dt=dt)
        else:
            raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(sc.BUILDERS)}")
        return self._apply_common(scen)

    def _apply_common(self, scen: sc.Scenario) -> sc.Scenario:
        v = self.values
        runs = []
        for spec in scen.runs:
            cfg = replace(spec.config, friction=self.friction(), contact=self.contact(),
                          motor=self.motor(spec.config.motor.stop_angle > 0))
            link = spec.link
            if link is not None:
                link = replace(link, preset=v["magnet.preset"], contact_force=v["magnet.contact_force_n"],
                               scale=link.scale * v["magnet.force_scale"])
            runs.append(replace(spec, config=cfg, link=link))
        return replace(scen, runs=tuple(runs))

    # -- manifest ----------------------------------------------------------
    def manifest(self, out_dir=None, extra: Optional[dict] = None) -> dict:
        snapshot = {}
        for key in sorted(self.values):
            layers = self.layers[key]
            snapshot[key] = {"value": self.values[key], "source": next(reversed(layers)),
                             "layers": layers}
        doc = {
            "config_path": self.path,
            "tool_version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "output_dir": str(out_dir) if out_dir is not None else None,
            "parameters": snapshot,
        }
        if extra:
            doc.update(extra)
        return doc


def _from_manifest(path, text: str) -> dict:
    """Parameter values from a manifest written by an earlier run."""
    try:
        doc = json.loads(text)
        return {k: v["value"] for k, v in doc["parameters"].items()}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"{path}: not a run manifest") from exc


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> ResolvedConfig:
    """Resolve defaults, then the TOML file at ``path``, then ``overrides``.

    A ``.json`` path is read as a manifest from an earlier run, which
    reproduces that run's parameters exactly.

    Raises :class:`ConfigError` on parse failures (message carries line and
    column), unknown keys (all listed) and invalid values.
    """
    file_vals = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        if Path(path).suffix == ".json":
            file_vals = _from_manifest(path, text)
        else:
            try:
                file_vals = _flatten(tomllib.loads(text))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    overrides = dict(overrides or {})
    unknown = sorted(k for k in list(file_vals) + list(overrides) if k not in DEFAULTS)
    if unknown:
        raise ConfigError("unknown configuration keys: " + ", ".join(unknown))
    values, layers = {}, {}
    for key, default in DEFAULTS.items():
        layers[key] = {"default": default}
        value = default
        if key in file_vals:
            value = layers[key]["file"] = _coerce(key, file_vals[key])
        if key in overrides:
            value = layers[key]["flag"] = _coerce(key, overrides[key])
        values[key] = value
    cfg = ResolvedConfig(values, layers, str(path) if path is not None else None)
    _validate(cfg)
    return cfg


def _validate(cfg: ResolvedConfig) -> None:
    v = cfg.values
    if v["magnet.preset"] not in PRESETS:
        raise ConfigError(f"magnet.preset: unknown preset {v['magnet.preset']!r}; "
                          f"choose from {', '.join(PRESETS)}")
    for key in DEFAULTS:
        if key.endswith("duration_s") and not v[key] > 0:
            raise ConfigError(f"{key}: duration must be positive")
    if not 0 < v["sim.dt_s"] <= 1e-3:
        raise ConfigError("sim.dt_s: must lie in (0, 1e-3]")
    try:
        cfg.module_params()
        cfg.gains()
        cfg.friction()
        cfg.motor(True)
        cfg.contact()
        prof = v["scenario.pendulum.profile"]
        if prof:
            SetpointProfile.from_config(prof)
    except (DiskbotError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def write_manifest(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
