"""PD velocity-mode controller, output limiting and setpoint profiles."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import InvalidParameterError
from .linmodel import PDGains

# The servo turns the pendulum relative to the shell at the commanded speed.
# The PD output is positive when the angle exceeds its target, so the motor
# must run the opposite way for the loop to be negative feedback.
MOTOR_SIGN = -1.0


@dataclass(frozen=True)
class Setpoint:
    theta_d: float = 0.0
    theta_dot_d: float = 0.0


@dataclass(frozen=True)
class ActuatorLimits:
    max_speed: float = 2 * math.pi
    max_accel: float = 4 * math.pi

    def __post_init__(self):
        if not (self.max_speed > 0 and self.max_accel > 0):
            raise InvalidParameterError("actuator limits must be positive")


@dataclass(frozen=True)
class SetpointProfile:
    """Piecewise setpoint trajectory; ``knots`` are ``(t, theta_d)`` pairs in radians."""

    knots: tuple[tuple[float, float], ...]
    mode: str = "hold"

    def __post_init__(self):
        knots = tuple((float(t), float(th)) for t, th in self.knots)
        if not knots:
            raise InvalidParameterError("a profile needs at least one knot")
        times = [t for t, _ in knots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidParameterError("knot times must be strictly increasing")
        if self.mode not in ("hold", "linear"):
            raise InvalidParameterError(f"unknown interpolation mode {self.mode!r}")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def constant(cls, theta_d: float) -> "SetpointProfile":
        return cls(((0.0, theta_d),))

    @classmethod
    def from_config(cls, entries: Sequence[dict]) -> "SetpointProfile":
        """Entries ``{t_s, theta_d_deg, mode}``; the first entry's mode applies."""
        if not entries:
            raise InvalidParameterError("empty profile")
        modes = {e.get("mode", "hold") for e in entries}
        if len(modes) > 1:
            raise InvalidParameterError("mixed interpolation modes in one profile")
        knots = [(float(e["t_s"]), math.radians(float(e["theta_d_deg"]))) for e in entries]
        return cls(tuple(knots), modes.pop())

    def to_config(self) -> list[dict]:
        return [{"t_s": t, "theta_d_deg": math.degrees(th), "mode": self.mode} for t, th in self.knots]

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.knots]


def sample_profile(profile: SetpointProfile, t: float) -> Setpoint:
    knots = profile.knots
    times = profile.times
    if t <= times[0]:
        return Setpoint(knots[0][1], 0.0)
    i = bisect.bisect_right(times, t) - 1
    t0, th0 = knots[i]
    if profile.mode == "hold" or i == len(knots) - 1:
        return Setpoint(th0, 0.0)
    t1, th1 = knots[i + 1]
    rate = (th1 - th0) / (t1 - t0)
    return Setpoint(th0 + rate * (t - t0), rate)


def pd_output(gains: PDGains, theta: float, theta_dot: float, sp: Setpoint) -> float:
    """``kp (theta - theta_d) + kd (theta_dot - theta_dot_d)``."""
    return gains.kp * (theta - sp.theta_d) + gains.kd * (theta_dot - sp.theta_dot_d)


def saturate(u: float, prev_u: float, dt: float, lim: ActuatorLimits) -> float:
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    u = min(max(u, -lim.max_speed), lim.max_speed)
    step = lim.max_accel * dt
    return min(max(u, prev_u - step), prev_u + step)


# ---------------------------------------------------------------------------
# Controllers used by the simulator. Each returns ``(u, omega)``: the logged
# controller output and the relative motor speed sent to the servo.


@dataclass
class PDController:
    gains: PDGains = field(default_factory=PDGains)
    profile: SetpointProfile = field(default_factory=lambda: SetpointProfile.constant(0.0))
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)
    feedback: str = "motor"  # "motor": pendulum relative to shell; "world": absolute
    motor_sign: float = MOTOR_SIGN
    prev_u: float = 0.0

    def __post_init__(self):
        if self.feedback not in ("motor", "world"):
            raise InvalidParameterError(f"unknown feedback source {self.feedback!r}")

    def reset(self):
        self.prev_u = 0.0

    def measure(self, phi, phi_dot, theta, theta_dot):
        if self.feedback == "world":
            return theta, theta_dot
        return theta - phi, theta_dot - phi_dot

    def __call__(self, t, phi, phi_dot, theta, theta_dot, dt):
        angle, rate = self.measure(phi, phi_dot, theta, theta_dot)
        sp = sample_profile(self.profile, t)
        u = saturate(pd_output(self.gains, angle, rate, sp), self.prev_u, dt, self.limits)
        self.prev_u = u
        return u, self.motor_sign * u


@dataclass
class SpeedCommand:
    """Constant relative motor speed (rad/s); zero acts as a brake."""

    speed: float = 0.0

    def reset(self):
        pass

    def __call__(self, t, phi, phi_dot, theta, theta_dot, dt):
        return self.speed, self.speed


@dataclass
class Passive:
    """Motor unpowered: no torque between pendulum and shell."""

    def reset(self):
        pass

    def __call__(self, t, phi, phi_dot, theta, theta_dot, dt):
        return 0.0, None
