"""Behavioural reconstructions of the five module experiments.

A :class:`Scenario` is plain data: one or more simulation runs plus the
thresholds its metrics are judged against. :func:`evaluate` scores a set of
trajectory logs using only logged columns and the scenario's own constants, so a
report can be recomputed from CSV files without re-simulating.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .control import (MOTOR_SIGN, ActuatorLimits, Passive, PDController, SetpointProfile,
                      SpeedCommand, sample_profile)
from .dynamics import (COUPLING_TOLERANCE, ModuleState, MotorParams, SimConfig, TrajectoryLog,
                       WorldState, run)
from .errors import InvalidParameterError, SimulationError
from .linmodel import DEFAULT_GAINS, ModuleParams, PDGains
from .magnetics import REPORTED_FORCE, MagnetLink, default_link

# Thresholds. The reference experiments are reported as plots and video
# snapshots only, so each value below is a judgement call explained in the
# rationale text carried into every report.
TRACKING_TOL_DEG = 2.0
SETTLE_TIME = 2.0
STEP_DEG = 45.0
STEP_INTERVAL = 3.0
COUPLING_START_GAP = 0.30
COUPLING_OFFSET_DEG = 15.0
COUPLING_TRANSIENT = 1.0
ARC_RESIDUAL_TOL = 0.02
PIVOT_MIN_DEG = 30.0
ARRAY_SEPARATION_TOL = 10e-3
JOINT_DRIVE_SPEED = 0.3
SPIN_SPEED = 1.0
SPIN_CENTER_TOL = 1e-3
SPIN_CO_REL_TOL_DEG = 1.0
SPIN_CO_COMMON_MIN = 1.0
BALANCE_TILT_DEG = 20.0
BALANCE_STOP_DEG = 60.0
BALANCE_INITIAL_TILT_DEG = 1.0
HARD_STOP_DEG = 150.0

RATIONALE = {
    "tracking": "2 deg is well below the visible step size in the pendulum-mode snapshots",
    "counter_rotation": "the shell must turn against the pendulum command, as described for pendulum mode",
    "no_divergence": "the run must complete with finite states",
    "gap_decreasing": "pendulum offsets must propel the modules together once the start transient has passed",
    "coupled": "modules must meet from a 0.30 m start, outside the useful magnet range",
    "stays_coupled": "after contact the magnets must hold the modules together",
    "arc_residual": "a fixed link keeps the free module on a circle of radius 2r; 2% allows contact compliance",
    "pivot": "30 deg is a clearly visible rotation about the anchored module",
    "link_held": "shells stay in contact and the two arrays stay within 10 mm of each other",
    "relative_angle": "counter-rotating servos wind the shells against each other",
    "centers_still": "counter-rotation should spin the shells in place",
    "co_relative": "co-rotating identical modules are point-symmetric, so their shell angles agree",
    "co_common": "co-rotation turns both shells together",
    "tilt": "the PD controller is expected to lose the stacked module; 20 deg is far outside a balanced pose",
}


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class ControllerSpec:
    kind: str = "passive"  # "pd", "speed" or "passive"
    gains: PDGains = DEFAULT_GAINS
    profile: SetpointProfile = SetpointProfile.constant(0.0)
    feedback: str = "motor"
    speed: float = 0.0
    motor_sign: float = MOTOR_SIGN
    limits: ActuatorLimits = ActuatorLimits()

    def __post_init__(self):
        if self.kind not in ("pd", "speed", "passive"):
            raise InvalidParameterError(f"unknown controller kind {self.kind!r}")

    def build(self):
        if self.kind == "pd":
            return PDController(self.gains, self.profile, self.limits, self.feedback, self.motor_sign)
        if self.kind == "speed":
            return SpeedCommand(self.speed)
        return Passive()


@dataclass(frozen=True)
class LinkSpec:
    preset: str = "H-reversed"
    contact_force: float = REPORTED_FORCE
    scale: float = 1.0

    def build(self) -> MagnetLink:
        return _cached_link(self.preset, self.contact_force).scaled(self.scale)


@lru_cache(maxsize=8)
def _cached_link(preset: str, contact_force: float) -> MagnetLink:
    return default_link(preset, contact_force)


@dataclass(frozen=True)
class RunSpec:
    label: str
    world: WorldState
    config: SimConfig
    controllers: tuple
    link: Optional[LinkSpec] = None
    stop_tilt_deg: float = 0.0  # > 0 ends the run once the stack tilts this far


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    runs: tuple
    settings: tuple = ()  # (key, value) pairs used by the metrics
    expected_failure: bool = False

    @property
    def params(self) -> dict:
        return dict(self.settings)


@dataclass(frozen=True)
class Metric:
    name: str
    value: float
    threshold: float
    op: str
    passed: bool
    rationale: str = ""


@dataclass
class MetricReport:
    scenario: str
    metrics: list
    expected_failure: bool = False
    note: str = ""
    degenerate: bool = False

    @property
    def passed(self) -> bool:
        return bool(self.metrics) and all(m.passed for m in self.metrics) and not self.degenerate

    @property
    def outcome(self) -> str:
        if self.degenerate:
            return "degenerate: perturbation required"
        if self.expected_failure:
            return "expected failure observed" if self.passed else "expected failure NOT observed"
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "outcome": self.outcome, "passed": self.passed,
                "expected_failure": self.expected_failure, "note": self.note,
                "metrics": [asdict(m) for m in self.metrics]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"scenario {self.scenario}: {self.outcome}"]
        for m in self.metrics:
            flag = "PASS" if m.passed else "FAIL"
            lines.append(f"  [{flag}] {m.name}: {m.value:.6g} {m.op} {m.threshold:.6g}  ({m.rationale})")
        if self.note:
            lines.append(f"  note: {self.note}")
        return "\n".join(lines)


def _metric(name, value, op, threshold, key=None):
    value = float(value)
    ok = {"<": value < threshold, "<=": value <= threshold,
          ">": value > threshold, ">=": value >= threshold}[op]
    return Metric(name, value, float(threshold), op, bool(ok), RATIONALE.get(key or name, ""))


# ---------------------------------------------------------------------------
# scenario builders


def _motor(stop: bool) -> MotorParams:
    return MotorParams(stop_angle=math.radians(HARD_STOP_DEG) if stop else 0.0)


def scenario_pendulum(params: ModuleParams = ModuleParams(), gains: PDGains = DEFAULT_GAINS,
                      step_deg: float = STEP_DEG, interval: float = STEP_INTERVAL,
                      motor_sign: float = MOTOR_SIGN, dt: float = 1e-4,
                      profile: Optional[SetpointProfile] = None,
                      duration: Optional[float] = None) -> Scenario:
    """One upright module stepping its pendulum through 0, +step, 0, -step, 0."""
    if profile is None:
        a = math.radians(step_deg)
        profile = SetpointProfile(((0.0, 0.0), (1.0, a), (1.0 + interval, 0.0),
                                   (1.0 + 2 * interval, -a), (1.0 + 3 * interval, 0.0)))
    if duration is None:
        duration = profile.knots[-1][0] + interval
    world = WorldState((ModuleState(regime="stick"),), (params,))
    cfg = SimConfig(dt=dt, duration=duration, motor=_motor(True))
    ctrl = ControllerSpec("pd", gains, profile, "motor", motor_sign=motor_sign)
    return Scenario("pendulum", "pendulum", (RunSpec("main", world, cfg, (ctrl,)),),
                    (("profile", profile), ("settle", SETTLE_TIME)))


def scenario_coupling(params: ModuleParams = ModuleParams(), gains: PDGains = DEFAULT_GAINS,
                      start_gap: float = COUPLING_START_GAP, offset_deg: float = COUPLING_OFFSET_DEG,
                      duration: float = 8.0, magnet_scale: float = 1.0, dt: float = 1e-4) -> Scenario:
    """Two upright modules roll toward each other on opposite pendulum offsets."""
    r = params.r
    half = r + start_gap / 2
    world = WorldState((ModuleState(x=-half), ModuleState(x=half)), (params, params))
    off = math.radians(offset_deg)
    ctrls = (ControllerSpec("pd", gains, SetpointProfile.constant(-off), "world"),
             ControllerSpec("pd", gains, SetpointProfile.constant(off), "world"))
    cfg = SimConfig(dt=dt, duration=duration)
    return Scenario("coupling", "coupling",
                    (RunSpec("main", world, cfg, ctrls, LinkSpec(scale=magnet_scale)),),
                    (("transient", COUPLING_TRANSIENT),))


def scenario_joint(params: ModuleParams = ModuleParams(), drive_speed: float = JOINT_DRIVE_SPEED,
                   duration: float = 10.0, magnet_scale: float = 1.0, dt: float = 1e-4) -> Scenario:
    """Side-lying pair, module 0 anchored; its pendulum swings the coupled module 1 around it."""
    r = params.r
    world = WorldState((ModuleState(theta=-math.pi / 2, regime="anchored"),
                        ModuleState(x=2 * r, theta=math.pi / 2, regime="table")), (params, params))
    ctrls = (ControllerSpec("speed", speed=drive_speed), ControllerSpec("speed", speed=0.0))
    cfg = SimConfig(dt=dt, duration=duration, gravity_mode="side")
    return Scenario("joint", "joint",
                    (RunSpec("main", world, cfg, ctrls, LinkSpec(scale=magnet_scale)),),
                    (("radius", 2 * r), ("arm", r)))


def _spin_run(mode: str, params: ModuleParams, speed: float, duration: float, dt: float) -> RunSpec:
    r = params.r
    world = WorldState((ModuleState(x=-r, theta=-math.pi / 2, regime="table"),
                        ModuleState(x=r, theta=math.pi / 2, regime="table")), (params, params))
    second = -speed if mode == "counter" else speed
    ctrls = (ControllerSpec("speed", speed=speed), ControllerSpec("speed", speed=second))
    cfg = SimConfig(dt=dt, duration=duration, gravity_mode="side")
    return RunSpec(mode, world, cfg, ctrls, LinkSpec())


def scenario_spin(mode: str = "both", params: ModuleParams = ModuleParams(),
                  speed: float = SPIN_SPEED, duration: float = 5.0, dt: float = 1e-4) -> Scenario:
    """Two coupled side-lying modules with servos turning in opposite (counter) or equal (co) senses."""
    modes = ("counter", "co") if mode == "both" else (mode,)
    if any(m not in ("counter", "co") for m in modes):
        raise InvalidParameterError(f"unknown spin mode {mode!r}")
    runs = tuple(_spin_run(m, params, speed, duration, dt) for m in modes)
    name = "spin" if mode == "both" else f"spin-{mode}"
    return Scenario(name, "spin", runs)


def scenario_balance(params: ModuleParams = ModuleParams(), gains: PDGains = DEFAULT_GAINS,
                     tilt_deg: float = BALANCE_INITIAL_TILT_DEG, duration: float = 10.0,
                     dt: float = 1e-4) -> Scenario:
    """A module resting on top of an anchored module, its PD loop trying to keep the pendulum down."""
    r = params.r
    tilt = math.radians(tilt_deg)
    lower = ModuleState(regime="anchored")
    upper = ModuleState(x=2 * r * math.sin(tilt), y=2 * r * math.cos(tilt), theta=tilt, regime="airborne")
    world = WorldState((lower, upper), (params, params))
    ctrls = (ControllerSpec("passive"),
             ControllerSpec("pd", gains, SetpointProfile.constant(0.0), "world"))
    cfg = SimConfig(dt=dt, duration=duration)
    return Scenario("balance", "balance",
                    (RunSpec("main", world, cfg, ctrls, LinkSpec(), stop_tilt_deg=BALANCE_STOP_DEG),),
                    (("initial_tilt_deg", tilt_deg),), expected_failure=True)


def default_suite() -> list:
    return [scenario_pendulum(), scenario_coupling(), scenario_joint(), scenario_spin(), scenario_balance()]


BUILDERS = {
    "pendulum": scenario_pendulum,
    "coupling": scenario_coupling,
    "joint": scenario_joint,
    "spin": scenario_spin,
    "balance": scenario_balance,
}


# ---------------------------------------------------------------------------
# running


def _tilt(S) -> float:
    return math.atan2(S[1, 0] - S[0, 0], S[1, 1] - S[0, 1])


def execute(spec: RunSpec) -> TrajectoryLog:
    """Simulate one run. Simulation errors return the partial log marked ``failed``."""
    ctrls = [c.build() for c in spec.controllers]
    link = spec.link.build() if spec.link is not None else None
    stop = None
    if spec.stop_tilt_deg > 0:
        limit = math.radians(spec.stop_tilt_deg)
        stop = lambda S, t: abs(_tilt(S)) > limit  # noqa: E731
    try:
        return run(spec.world, spec.config, ctrls, link=link, stop=stop)
    except SimulationError as err:
        return err.log


def run_scenario(scenario: Scenario):
    logs = {spec.label: execute(spec) for spec in scenario.runs}
    return logs, evaluate(scenario, logs)


def _run_for_pool(scenario):
    return run_scenario(scenario)[1]


def run_all(scenarios=None, workers: int = 1) -> list:
    """Run every scenario and return the reports in input order."""
    scenarios = default_suite() if scenarios is None else list(scenarios)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_for_pool, scenarios))
    return [run_scenario(s)[1] for s in scenarios]


def suite_flag(reports) -> int:
    """0 when every report passed (expected failures included), 1 otherwise."""
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# metrics


def evaluate(scenario: Scenario, logs: dict) -> MetricReport:
    fn = _EVALUATORS[scenario.kind]
    report = fn(scenario, logs)
    report.expected_failure = scenario.expected_failure
    failed = [k for k, log in logs.items() if log.status == "failed"]
    if failed and not scenario.expected_failure:
        report.note = "; ".join(f"{k}: {logs[k].message}" for k in failed)
    return report


def _finite(log: TrajectoryLog) -> bool:
    return log.status != "failed" and bool(np.all(np.isfinite(log.states)))


def _eval_pendulum(sc: Scenario, logs) -> MetricReport:
    log = logs["main"]
    prof: SetpointProfile = sc.params["profile"]
    settle = sc.params["settle"]
    t = log.t
    alpha = log.column("theta") - log.column("phi")
    target = np.array([sample_profile(prof, tk).theta_d for tk in t])
    err = np.abs(alpha - target)
    times = prof.times + [t[-1] + 1e-9]
    worst = 0.0
    signs_ok, steps = 0, 0
    phi = log.column("phi")
    for k in range(len(prof.knots)):
        lo, hi = times[k] + settle, times[k + 1]
        sel = (t >= lo) & (t < hi)
        if sel.any():
            worst = max(worst, float(err[sel].max()))
        if k == 0:
            continue
        delta_cmd = prof.knots[k][1] - prof.knots[k - 1][1]
        i0 = np.searchsorted(t, times[k])
        i1 = np.searchsorted(t, min(times[k] + settle, t[-1]))
        if delta_cmd != 0 and i1 > i0:
            steps += 1
            if np.sign(phi[i1] - phi[i0]) == -np.sign(delta_cmd):
                signs_ok += 1
    metrics = [
        _metric("tracking", math.degrees(worst), "<", TRACKING_TOL_DEG),
        _metric("counter_rotation", signs_ok, ">=", max(steps, 1)),
        _metric("no_divergence", float(not _finite(log)), "<", 0.5),
    ]
    return MetricReport(sc.name, metrics)


def _first_coupled(log: TrajectoryLog) -> Optional[int]:
    idx = np.flatnonzero(log.coupled)
    return int(idx[0]) if idx.size else None


def _eval_coupling(sc: Scenario, logs) -> MetricReport:
    log = logs["main"]
    t, gap = log.t, log.gap
    k_c = _first_coupled(log)
    end = k_c if k_c is not None else len(t)
    sel = np.flatnonzero(t >= sc.params["transient"])
    sel = sel[sel < end]
    worst_step = float(np.max(np.diff(gap[sel]))) if sel.size > 1 else 0.0
    metrics = [
        _metric("gap_decreasing", worst_step, "<", 0.0),
        _metric("coupled", t[k_c] if k_c is not None else math.inf, "<=", t[-1]),
    ]
    after = float(gap[k_c:].max()) if k_c is not None else math.inf
    metrics.append(_metric("stays_coupled", after, "<=", COUPLING_TOLERANCE))
    if not _finite(log):
        metrics.append(_metric("no_divergence", 1.0, "<", 0.5))
    return MetricReport(sc.name, metrics)


def _tips(log: TrajectoryLog, module: int, arm: float):
    th = log.column("theta", module)
    return (log.column("x", module) - arm * np.sin(th), log.column("y", module) - arm * np.cos(th))


def _eval_joint(sc: Scenario, logs) -> MetricReport:
    log = logs["main"]
    R, arm = sc.params["radius"], sc.params["arm"]
    dx = log.column("x", 1) - log.column("x", 0)
    dy = log.column("y", 1) - log.column("y", 0)
    dist = np.hypot(dx, dy)
    pivot = np.unwrap(np.arctan2(dy, dx))
    ax, ay = _tips(log, 0, arm)
    bx, by = _tips(log, 1, arm)
    separation = float(np.max(np.hypot(bx - ax, by - ay)))
    metrics = [
        _metric("arc_residual", np.max(np.abs(dist - R)) / R, "<", ARC_RESIDUAL_TOL),
        _metric("pivot", math.degrees(abs(pivot[-1] - pivot[0])), ">=", PIVOT_MIN_DEG),
        _metric("link_held", separation if np.max(log.gap) <= COUPLING_TOLERANCE else math.inf,
                "<=", ARRAY_SEPARATION_TOL),
    ]
    if not _finite(log):
        metrics.append(_metric("no_divergence", 1.0, "<", 0.5))
    return MetricReport(sc.name, metrics)


def _eval_spin(sc: Scenario, logs) -> MetricReport:
    metrics = []
    if "counter" in logs:
        log = logs["counter"]
        rel = log.column("phi", 0) - log.column("phi", 1)
        drift = max(float(np.max(np.hypot(log.column("x", i) - log.column("x", i)[0],
                                          log.column("y", i) - log.column("y", i)[0]))) for i in (0, 1))
        metrics.append(_metric("relative_angle", abs(rel[-1]), ">", math.pi))
        growth = np.diff(np.abs(rel))
        metrics.append(_metric("relative_monotonic", float(np.min(growth)), ">=", -1e-9, "relative_angle"))
        metrics.append(_metric("centers_still", drift, "<", SPIN_CENTER_TOL))
    if "co" in logs:
        log = logs["co"]
        rel = log.column("phi", 0) - log.column("phi", 1)
        common = 0.5 * (log.column("phi", 0) + log.column("phi", 1))
        metrics.append(_metric("co_relative", math.degrees(np.max(np.abs(rel))), "<", SPIN_CO_REL_TOL_DEG))
        metrics.append(_metric("co_common", abs(common[-1] - common[0]), ">", SPIN_CO_COMMON_MIN))
    for key, log in logs.items():
        if not _finite(log):
            metrics.append(_metric(f"{key}_no_divergence", 1.0, "<", 0.5, "no_divergence"))
    return MetricReport(sc.name, metrics)


def _eval_balance(sc: Scenario, logs) -> MetricReport:
    log = logs["main"]
    S = log.states
    tilt = np.degrees(np.abs(np.arctan2(S[:, 1, 0] - S[:, 0, 0], S[:, 1, 1] - S[:, 0, 1])))
    diverged = log.status == "failed"
    value = math.inf if diverged else float(np.max(tilt))
    report = MetricReport(sc.name, [_metric("tilt", value, ">", BALANCE_TILT_DEG)])
    if sc.params.get("initial_tilt_deg", 1.0) == 0.0:
        report.degenerate = True
        report.note = "zero initial tilt keeps the stack on its unstable equilibrium"
    elif diverged:
        report.note = f"simulation stopped: {log.message}"
    elif log.status == "stopped":
        report.note = f"tilt passed {BALANCE_STOP_DEG:g} deg at t={log.t[-1]:.3f} s"
    return report


_EVALUATORS = {
    "pendulum": _eval_pendulum,
    "coupling": _eval_coupling,
    "joint": _eval_joint,
    "spin": _eval_spin,
    "balance": _eval_balance,
}


def with_overrides(scenario_name: str, **kw) -> Scenario:
    if scenario_name not in BUILDERS:
        raise InvalidParameterError(f"unknown scenario {scenario_name!r}")
    return BUILDERS[scenario_name](**kw)
