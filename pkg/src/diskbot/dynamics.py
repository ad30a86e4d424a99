"""Planar rigid-body simulation of one or two disk modules.

Each module is a circular shell (mass ``M``, inertia ``M r^2 / 2``) with an
internal pendulum (mass ``m`` at arm ``l``, inertia ``I`` about its centre of
mass) driven relative to the shell by a servo. Ground contact switches between
rolling (``stick``) and Coulomb sliding (``slip``); ``table`` is the
side-lying regime where gravity is normal to the plane of motion and acts only
through table friction. See :mod:`diskbot._kernel` for the equations.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernel as K
from .errors import (ContactError, DivergenceError, InvalidParameterError,
                     LiftOffError, SimulationError)
from .linmodel import ModuleParams
from .magnetics import MagnetLink

REGIMES = ("stick", "slip", "airborne", "anchored", "table")
_REGIME_CODE = {name: i for i, name in enumerate(REGIMES)}
GRAVITY_MODES = ("upright", "side")
COUPLING_TOLERANCE = 1e-3  # gap (m) below which modules count as coupled


@dataclass(frozen=True)
class FrictionParams:
    mu_s: float = 0.6
    mu_k: float = 0.5
    mu_disk: float = 0.3
    v_eps: float = 1e-4
    v_reg: float = 1e-2  # regularisation speed for table and disk-disk friction

    def __post_init__(self):
        if not (self.mu_s >= self.mu_k >= 0):
            raise InvalidParameterError("need mu_s >= mu_k >= 0")
        if self.mu_disk < 0:
            raise InvalidParameterError("mu_disk must be non-negative")
        if not (self.v_eps > 0 and self.v_reg > 0):
            raise InvalidParameterError("velocity thresholds must be positive")


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2e5
    damping: float = 100.0
    max_penetration: float = 5e-3

    def __post_init__(self):
        if not (self.stiffness > 0 and self.damping >= 0 and self.max_penetration > 0):
            raise InvalidParameterError("invalid contact parameters")


@dataclass(frozen=True)
class MotorParams:
    """Servo velocity loop: ``tau = clip(gain (omega_cmd - omega_rel), +-max_torque)``."""

    gain: float = 1.0
    max_torque: float = 0.5
    stop_angle: float = 0.0  # relative hard stop (rad); 0 disables it
    stop_stiffness: float = 20.0
    stop_damping: float = 0.2

    def __post_init__(self):
        if not (self.gain > 0 and self.max_torque > 0):
            raise InvalidParameterError("motor gain and torque limit must be positive")
        if self.stop_angle < 0:
            raise InvalidParameterError("stop angle must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    duration: float = 1.0
    gravity_mode: str = "upright"
    integrator: str = "rk4"
    friction: FrictionParams = field(default_factory=FrictionParams)
    contact: ContactParams = field(default_factory=ContactParams)
    motor: MotorParams = field(default_factory=MotorParams)

    def __post_init__(self):
        if not (0 < self.dt <= 1e-3):
            raise InvalidParameterError("dt must lie in (0, 1e-3] s")
        if not self.duration > 0:
            raise InvalidParameterError("duration must be positive")
        if self.gravity_mode not in GRAVITY_MODES:
            raise InvalidParameterError(f"unknown gravity mode {self.gravity_mode!r}")
        if self.integrator != "rk4":
            raise InvalidParameterError("only the rk4 integrator is available")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def settings(self, magnet: bool = True) -> np.ndarray:
        f, c, mo = self.friction, self.contact, self.motor
        st = np.zeros(K.N_SETTINGS)
        st[K.S_UPRIGHT] = 1.0 if self.gravity_mode == "upright" else 0.0
        st[K.S_MU_S], st[K.S_MU_K], st[K.S_MU_DISK] = f.mu_s, f.mu_k, f.mu_disk
        st[K.S_V_EPS], st[K.S_V_REG] = f.v_eps, f.v_reg
        st[K.S_K_CONTACT], st[K.S_C_CONTACT], st[K.S_PEN_MAX] = c.stiffness, c.damping, c.max_penetration
        st[K.S_KS], st[K.S_TAU_MAX] = mo.gain, mo.max_torque
        st[K.S_STOP], st[K.S_K_STOP], st[K.S_C_STOP] = mo.stop_angle, mo.stop_stiffness, mo.stop_damping
        st[K.S_MAGNET] = 1.0 if magnet else 0.0
        return st


@dataclass(frozen=True)
class ModuleState:
    x: float = 0.0
    x_dot: float = 0.0
    phi: float = 0.0
    phi_dot: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0
    regime: str = "stick"
    y: float = 0.0
    y_dot: float = 0.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidParameterError(f"unknown regime {self.regime!r}")
        if not np.all(np.isfinite(self.row())):
            raise InvalidParameterError("module state must be finite")

    def row(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.theta,
                         self.x_dot, self.y_dot, self.phi_dot, self.theta_dot])

    @classmethod
    def from_row(cls, row, regime: str) -> "ModuleState":
        x, y, phi, th, xd, yd, phid, thd = (float(v) for v in row)
        return cls(x, xd, phi, phid, th, thd, regime, y, yd)


def rolling_residual(s: ModuleState, p: ModuleParams) -> float:
    return abs(s.x_dot - p.r * s.phi_dot)


@dataclass(frozen=True)
class WorldState:
    modules: tuple
    params: tuple
    t: float = 0.0

    def __post_init__(self):
        mods = tuple(self.modules)
        pars = tuple(self.params)
        if not 1 <= len(mods) <= 2:
            raise InvalidParameterError("a world holds one or two modules")
        if len(pars) == 1 and len(mods) == 2:
            pars = pars * 2
        if len(pars) != len(mods):
            raise InvalidParameterError("one parameter set per module")
        object.__setattr__(self, "modules", mods)
        object.__setattr__(self, "params", pars)

    @property
    def center_distance(self) -> float:
        if len(self.modules) < 2:
            return math.nan
        a, b = self.modules
        return math.hypot(b.x - a.x, b.y - a.y)

    @property
    def gap(self) -> float:
        if len(self.modules) < 2:
            return math.nan
        return max(self.center_distance - self.params[0].r - self.params[1].r, 0.0)

    @property
    def coupled(self) -> bool:
        return len(self.modules) == 2 and self.gap <= COUPLING_TOLERANCE

    def arrays(self):
        S = np.array([m.row() for m in self.modules])
        regimes = np.array([_REGIME_CODE[m.regime] for m in self.modules], dtype=np.int64)
        P = np.array([param_row(p) for p in self.params])
        return S, regimes, P

    def with_arrays(self, S, regimes, t) -> "WorldState":
        mods = tuple(ModuleState.from_row(S[i], REGIMES[regimes[i]]) for i in range(len(self.modules)))
        return WorldState(mods, self.params, t)


def param_row(p: ModuleParams) -> np.ndarray:
    return np.array([p.M, p.m, p.l, p.I, p.b, p.r, p.g], dtype=float)


def _link_arrays(link: Optional[MagnetLink]):
    if link is None:
        return np.array([0.0, 1.0]), np.array([0.0, 0.0]), False
    return np.asarray(link.gaps, float), np.asarray(link.forces, float), True


# ---------------------------------------------------------------------------
# derivatives


def single_module_derivative(p: ModuleParams, friction: FrictionParams, s: ModuleState,
                             motor_torque: float = 0.0, gravity_mode: str = "upright",
                             external_force=(0.0, 0.0), motor: Optional[MotorParams] = None):
    """Time derivative of one module's state row.

    Returns ``(derivative, (N, F_t))`` where the derivative follows the row
    layout ``[x, y, phi, theta, x_dot, y_dot, phi_dot, theta_dot]`` and ``N``,
    ``F_t`` are the ground normal and tangential forces (zero off the ground).
    ``motor_torque`` is applied directly; ``external_force`` acts at the shell
    centre.
    """
    cfg = SimConfig(gravity_mode=gravity_mode, friction=friction, motor=motor or MotorParams())
    st = cfg.settings(magnet=False)
    S = s.row()[None, :]
    regimes = np.array([_REGIME_CODE[s.regime]], dtype=np.int64)
    P = param_row(p)[None, :]
    forces = np.zeros((1, 2))
    info = np.zeros(4)
    qext = np.zeros((1, 4))
    fext = np.array([external_force], dtype=float)
    gaps, fl, _ = _link_arrays(None)
    D = K.world_derivative(S, regimes, P, st, np.array([K.MOTOR_TORQUE]), np.array([float(motor_torque)]),
                           fext, gaps, fl, forces, info, qext)
    if s.regime in ("stick", "slip") and forces[0, 0] < 0:
        raise LiftOffError("ground normal force became negative")
    return D[0], (forces[0, 0], forces[0, 1])


def two_module_derivative(world: WorldState, config: SimConfig, torques=(0.0, 0.0),
                          link: Optional[MagnetLink] = None, external_forces=None):
    """Derivative of both modules' rows plus ``(gap, magnet force, contact force)``."""
    if len(world.modules) != 2:
        raise InvalidParameterError("two_module_derivative needs two modules")
    S, regimes, P = world.arrays()
    if world.center_distance < P[0, K.P_r] + P[1, K.P_r] - config.contact.max_penetration:
        raise ContactError("modules interpenetrate beyond tolerance", world.t)
    gaps, fl, on = _link_arrays(link)
    st = config.settings(magnet=on)
    fext = np.zeros((2, 2)) if external_forces is None else np.asarray(external_forces, float)
    forces = np.zeros((2, 2))
    info = np.zeros(4)
    qext = np.zeros((2, 4))
    D = K.world_derivative(S, regimes, P, st, np.array([K.MOTOR_TORQUE] * 2),
                           np.asarray(torques, float), fext, gaps, fl, forces, info, qext)
    return D, (info[0], info[1], info[2])


# ---------------------------------------------------------------------------
# energy and momentum


def mechanical_energy(S: np.ndarray, P: np.ndarray, upright: bool = True) -> np.ndarray:
    """Kinetic plus potential energy of each module row (potential zero at ``y = 0``, hanging)."""
    S = np.atleast_2d(S)
    P = np.broadcast_to(np.atleast_2d(P), (S.shape[0], P.shape[-1]))
    M, m, l, I, r, g = (P[:, i] for i in (K.P_M, K.P_m, K.P_l, K.P_I, K.P_r, K.P_g))
    x, y, phi, th, xd, yd, phid, thd = S.T
    T = (0.5 * (M + m) * (xd ** 2 + yd ** 2) + 0.25 * M * r ** 2 * phid ** 2
         + 0.5 * (I + m * l ** 2) * thd ** 2
         - m * l * np.cos(th) * xd * thd + m * l * np.sin(th) * yd * thd)
    V = ((M + m) * g * y + m * g * l * (1 - np.cos(th))) if upright else 0.0
    return T + V


def angular_momentum(S: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Counter-clockwise angular momentum of each module row about the origin."""
    S = np.atleast_2d(S)
    P = np.broadcast_to(np.atleast_2d(P), (S.shape[0], P.shape[-1]))
    M, m, l, I, r = (P[:, i] for i in (K.P_M, K.P_m, K.P_l, K.P_I, K.P_r))
    x, y, phi, th, xd, yd, phid, thd = S.T
    xp, yp = x - l * np.sin(th), y - l * np.cos(th)
    xpd, ypd = xd - l * np.cos(th) * thd, yd + l * np.sin(th) * thd
    return (M * (x * yd - y * xd) - 0.5 * M * r ** 2 * phid
            + m * (xp * ypd - yp * xpd) - I * thd)


def linear_momentum(S: np.ndarray, P: np.ndarray) -> np.ndarray:
    S = np.atleast_2d(S)
    P = np.broadcast_to(np.atleast_2d(P), (S.shape[0], P.shape[-1]))
    M, m, l = P[:, K.P_M], P[:, K.P_m], P[:, K.P_l]
    th, xd, yd, thd = S[:, 3], S[:, 4], S[:, 5], S[:, 7]
    return np.stack([(M + m) * xd - m * l * np.cos(th) * thd,
                     (M + m) * yd + m * l * np.sin(th) * thd], axis=-1)


# ---------------------------------------------------------------------------
# trajectory log

LOG_FIELDS = ("t", "module", "x", "x_dot", "phi", "phi_dot", "theta", "theta_dot",
              "u", "regime", "gap", "coupled", "y", "y_dot")
_ROW_INDEX = {"x": 0, "y": 1, "phi": 2, "theta": 3, "x_dot": 4, "y_dot": 5, "phi_dot": 6, "theta_dot": 7}


@dataclass
class TrajectoryLog:
    """Sampled states, one array per quantity with shape ``(n_modules, n_samples)``."""

    t: np.ndarray
    states: np.ndarray  # (n_samples, n_modules, 8)
    u: np.ndarray  # (n_samples, n_modules)
    regime: np.ndarray  # (n_samples, n_modules) int codes
    gap: np.ndarray  # (n_samples,)
    status: str = "complete"
    message: str = ""

    @property
    def n_modules(self) -> int:
        return self.states.shape[1]

    def __len__(self):
        return len(self.t)

    def column(self, name: str, module: int = 0) -> np.ndarray:
        if name in _ROW_INDEX:
            return self.states[:, module, _ROW_INDEX[name]]
        if name == "u":
            return self.u[:, module]
        if name == "regime":
            return self.regime[:, module]
        if name == "gap":
            return self.gap
        if name == "coupled":
            return self.coupled
        if name == "t":
            return self.t
        raise KeyError(name)

    @property
    def coupled(self) -> np.ndarray:
        return np.where(np.isnan(self.gap), False, self.gap <= COUPLING_TOLERANCE)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            coupled = self.coupled.tolist()
            # tolist() gives Python floats, whose repr round-trips exactly
            states = self.states[:, :, [0, 4, 2, 6, 3, 7, 1, 5]].tolist()
            t, u, gap = self.t.tolist(), self.u.tolist(), self.gap.tolist()
            regime = self.regime.tolist()
            for k in range(len(t)):
                for i in range(self.n_modules):
                    x, xd, ph, phd, th, thd, y, yd = states[k][i]
                    w.writerow([t[k], i, x, xd, ph, phd, th, thd, u[k][i], REGIMES[regime[k][i]],
                                gap[k], int(coupled[k]), y, yd])

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InvalidParameterError("empty trajectory file")
        n_mod = max(int(r["module"]) for r in rows) + 1
        n = len(rows) // n_mod
        states = np.zeros((n, n_mod, 8))
        u = np.zeros((n, n_mod))
        reg = np.zeros((n, n_mod), dtype=np.int64)
        t = np.zeros(n)
        gap = np.zeros(n)
        for j, r in enumerate(rows):
            k, i = divmod(j, n_mod)
            t[k] = float(r["t"])
            gap[k] = float(r["gap"])
            for name, idx in _ROW_INDEX.items():
                states[k, i, idx] = float(r.get(name) or 0.0)
            u[k, i] = float(r["u"])
            reg[k, i] = _REGIME_CODE[r["regime"]]
        return cls(t, states, u, reg, gap)


# ---------------------------------------------------------------------------
# stepping


def _raise_status(code: int, t: float):
    if code == K.LIFT_OFF:
        raise LiftOffError("ground normal force became negative", t)
    if code == K.PENETRATION:
        raise ContactError("shell penetration exceeded tolerance", t)
    if code == K.NON_FINITE:
        raise DivergenceError("state became non-finite", t)


def _commands(controllers, S, t, dt):
    n = S.shape[0]
    modes = np.zeros(n, dtype=np.int64)
    cmds = np.zeros(n)
    us = np.zeros(n)
    for i in range(n):
        c = controllers[i] if controllers is not None else None
        if c is None:
            continue
        u, omega = c(t, S[i, 2], S[i, 6], S[i, 3], S[i, 7], dt)
        us[i] = u
        if omega is not None:
            modes[i] = K.MOTOR_SPEED
            cmds[i] = omega
    return us, modes, cmds


class Simulator:
    """Holds compiled arrays for repeated stepping of one world."""

    def __init__(self, world: WorldState, config: SimConfig, link: Optional[MagnetLink] = None,
                 external_force: Optional[Callable[[float], Sequence]] = None):
        self.config = config
        self.world0 = world
        self.S, self.regimes, self.P = world.arrays()
        self.gaps, self.forces_tab, on = _link_arrays(link)
        self.st = config.settings(magnet=on and len(world.modules) == 2)
        self.t = world.t
        self._k = 0
        self.external_force = external_force
        n = self.S.shape[0]
        self.fext = np.zeros((n, 2))
        self._forces = np.zeros((n, 2))
        self._info = np.zeros(4)

    def step(self, modes, cmds):
        if self.external_force is not None:
            self.fext[:] = np.asarray(self.external_force(self.t), float).reshape(self.fext.shape)
        code = K.step_world(self.S, self.regimes, self.P, self.st, modes, cmds, self.fext,
                            self.gaps, self.forces_tab, self.config.dt, self._forces, self._info)
        self.t = self.world0.t + (self._k + 1) * self.config.dt
        self._k += 1
        if code != K.OK:
            _raise_status(code, self.t)

    def gap(self) -> float:
        if self.S.shape[0] < 2:
            return math.nan
        d = math.hypot(self.S[1, 0] - self.S[0, 0], self.S[1, 1] - self.S[0, 1])
        return max(d - self.P[0, K.P_r] - self.P[1, K.P_r], 0.0)

    def world(self) -> WorldState:
        return self.world0.with_arrays(self.S, self.regimes, self.t)


def step(world: WorldState, config: SimConfig, controllers=None, link: Optional[MagnetLink] = None):
    """Advance ``world`` by one ``config.dt``; returns the new :class:`WorldState`."""
    sim = Simulator(world, config, link)
    _, modes, cmds = _commands(controllers, sim.S, world.t, config.dt)
    sim.step(modes, cmds)
    return sim.world()


def run(world: WorldState, config: SimConfig, controllers=None, link: Optional[MagnetLink] = None,
        external_force: Optional[Callable[[float], Sequence]] = None,
        stop: Optional[Callable[[np.ndarray, float], bool]] = None) -> TrajectoryLog:
    """Integrate for ``config.duration`` and log every step, ``t = 0`` included.

    ``controllers`` holds one callable (or ``None`` for an unpowered motor) per
    module, each returning ``(u, omega)``. ``stop(S, t)`` may end the run early;
    the log is then marked ``"stopped"``. On a simulation error the partial log is
    attached to the exception as ``err.log`` with status ``"failed"``.
    """
    for c in controllers or ():
        if c is not None and hasattr(c, "reset"):
            c.reset()
    sim = Simulator(world, config, link, external_force)
    n_steps = config.n_steps
    n_mod = sim.S.shape[0]
    t = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, n_mod, 8))
    us = np.empty((n_steps + 1, n_mod))
    regs = np.empty((n_steps + 1, n_mod), dtype=np.int64)
    gaps = np.empty(n_steps + 1)
    dt = config.dt
    status, message = "complete", ""
    k = 0
    while True:
        tk = world.t + k * dt
        u, modes, cmds = _commands(controllers, sim.S, tk, dt)
        t[k] = tk
        states[k] = sim.S
        us[k] = u
        regs[k] = sim.regimes
        gaps[k] = sim.gap()
        if k == n_steps:
            break
        if stop is not None and stop(sim.S, tk):
            status, message = "stopped", f"stop condition met at t={tk:.4g} s"
            break
        try:
            sim.step(modes, cmds)
        except SimulationError as err:
            log = TrajectoryLog(t[:k + 1], states[:k + 1], us[:k + 1], regs[:k + 1], gaps[:k + 1],
                                "failed", str(err))
            err.log = log
            raise
        k += 1
    return TrajectoryLog(t[:k + 1].copy(), states[:k + 1].copy(), us[:k + 1].copy(),
                         regs[:k + 1].copy(), gaps[:k + 1].copy(), status, message)
