import math
from dataclasses import replace

import numpy as np
import pytest

from diskbot import scenarios as sc
from diskbot.control import Passive, SpeedCommand
from diskbot.dynamics import (REGIMES, ContactParams, FrictionParams, ModuleState, MotorParams,
                              SimConfig, Simulator, TrajectoryLog, WorldState, angular_momentum,
                              linear_momentum, mechanical_energy, param_row, rolling_residual, run,
                              single_module_derivative, step, two_module_derivative)
from diskbot.errors import ContactError, InvalidParameterError, LiftOffError, SimulationError
from diskbot.linmodel import ModuleParams
from diskbot.magnetics import MagnetLink

P0 = ModuleParams(b=0.0)
GRIP = FrictionParams(mu_s=10.0, mu_k=9.0)


def swing(theta0=0.5, duration=1.0, dt=1e-4, p=P0, friction=GRIP):
    w = WorldState((ModuleState(theta=theta0),), (p,))
    return run(w, SimConfig(dt=dt, duration=duration, friction=friction))


def test_sample_count_includes_start():
    log = swing(duration=1.0)
    assert len(log) == 10001
    assert log.t[0] == 0.0 and log.t[-1] == pytest.approx(1.0)


def test_energy_conserved_on_free_swing():
    log = swing(duration=10.0)
    E = mechanical_energy(log.states[:, 0], param_row(P0))
    assert np.abs(E - E[0]).max() <= 1e-6 * abs(E[0])


def test_rolling_constraint_holds_while_stuck():
    log = swing(duration=2.0)
    assert np.all(log.regime == REGIMES.index("stick"))
    res = np.abs(log.column("x_dot") - P0.r * log.column("phi_dot"))
    assert res.max() <= 1e-9
    assert rolling_residual(ModuleState(x_dot=0.06, phi_dot=1.0), P0) == pytest.approx(0.0, abs=1e-15)


def test_rk4_convergence_order():
    ends = [swing(theta0=0.8, dt=dt).states[-1, 0] for dt in (1e-3, 5e-4, 2.5e-4)]
    e1 = np.abs(ends[0] - ends[1]).max()
    e2 = np.abs(ends[1] - ends[2]).max()
    assert math.log2(e1 / e2) >= 3.7


def test_runs_are_bitwise_deterministic():
    a, b = swing(duration=0.5), swing(duration=0.5)
    assert np.array_equal(a.states, b.states)


def test_swing_shell_counter_rotates():
    # the shell reacts against the pendulum: a pendulum released to the right
    # rolls the shell the other way at first
    log = swing(theta0=0.5, duration=0.05)
    assert log.column("theta")[-1] < 0.5
    assert np.sign(log.column("phi")[-1]) == np.sign(log.column("x")[-1])


def test_frictionless_slide_conserves_horizontal_momentum():
    p = P0
    w = WorldState((ModuleState(theta=0.4, x_dot=0.1, regime="slip"),), (p,))
    cfg = SimConfig(duration=2.0, friction=FrictionParams(mu_s=0.0, mu_k=0.0))
    log = run(w, cfg, [SpeedCommand(1.0)])
    px = linear_momentum(log.states[:, 0], param_row(p))[:, 0]
    assert np.abs(px - px[0]).max() <= 1e-10


def test_side_mode_pair_conserves_momenta_without_table_friction():
    spec = sc.scenario_spin("counter").runs[0]
    p = spec.world.params[0].with_(b=0.0)
    a, b = spec.world.modules
    w = WorldState((a, replace(b, x_dot=0.01)), (p, p))
    cfg = replace(spec.config, friction=FrictionParams(mu_s=0.0, mu_k=0.0), duration=2.0)
    log = run(w, cfg, [SpeedCommand(1.0), SpeedCommand(0.3)], spec.link.build())
    P = param_row(p)
    L = angular_momentum(log.states[:, 0], P) + angular_momentum(log.states[:, 1], P)
    scale = 0.5 * p.M * p.r ** 2 * np.abs(log.states[:, :, 6]).max()
    assert np.abs(L - L[0]).max() <= 1e-4 * scale
    mom = linear_momentum(log.states[:, 0], P) + linear_momentum(log.states[:, 1], P)
    assert np.abs(mom - mom[0]).max() <= 1e-8


def test_mirror_symmetric_pair_stays_symmetric():
    spec = sc.scenario_coupling(duration=1.0).runs[0]
    log = run(spec.world, spec.config, [c.build() for c in spec.controllers], spec.link.build())
    S = log.states
    for idx in (0, 2, 3, 4, 6, 7):  # x, phi, theta and rates flip sign
        assert np.array_equal(S[:, 0, idx], -S[:, 1, idx])


def test_zero_magnet_pair_equals_independent_runs():
    a, b = ModuleState(x=-0.5, theta=0.3), ModuleState(x=0.5, theta=-0.2)
    cfg = SimConfig(duration=0.5)
    pair = run(WorldState((a, b), (P0, P0)), cfg, [SpeedCommand(0.5), SpeedCommand(-0.3)], MagnetLink.zero())
    la = run(WorldState((a,), (P0,)), cfg, [SpeedCommand(0.5)])
    lb = run(WorldState((b,), (P0,)), cfg, [SpeedCommand(-0.3)])
    assert np.array_equal(pair.states[:, 0], la.states[:, 0])
    assert np.array_equal(pair.states[:, 1], lb.states[:, 0])


def test_anchored_module_only_swings():
    w = WorldState((ModuleState(x=0.2, theta=0.7, regime="anchored"),), (ModuleParams(),))
    log = run(w, SimConfig(duration=1.0))
    for name in ("x", "y", "phi"):
        assert np.all(log.column(name) == log.column(name)[0])
    assert np.ptp(log.column("theta")) > 0.5


def test_stick_slip_transition_under_strong_drive():
    w = WorldState((ModuleState(),), (ModuleParams(),))
    cfg = SimConfig(duration=1.0, friction=FrictionParams(mu_s=0.05, mu_k=0.04))
    log = run(w, cfg, [SpeedCommand(6.0)])
    assert np.any(log.regime == REGIMES.index("slip"))


def test_external_force_and_stop():
    w = WorldState((ModuleState(),), (P0,))
    log = run(w, SimConfig(duration=1.0), external_force=lambda t: [(0.2, 0.0)],
              stop=lambda S, t: S[0, 0] > 0.01)
    assert log.status == "stopped"
    assert log.column("x")[-1] > 0.01


def test_lift_off_is_reported():
    with pytest.raises(LiftOffError):
        single_module_derivative(P0, FrictionParams(), ModuleState(), external_force=(0.0, 50.0))
    w = WorldState((ModuleState(),), (P0,))
    with pytest.raises(LiftOffError) as err:
        run(w, SimConfig(duration=0.1), external_force=lambda t: [(0.0, 50.0)])
    assert err.value.log.status == "failed"
    assert isinstance(err.value, SimulationError)


def test_single_module_derivative_rest():
    D, (N, Ft) = single_module_derivative(P0, FrictionParams(), ModuleState())
    assert np.allclose(D, 0.0, atol=1e-15)
    assert N == pytest.approx((P0.M + P0.m) * P0.g)
    assert Ft == pytest.approx(0.0, abs=1e-15)


def test_motor_torque_counter_rotates_shell():
    D, _ = single_module_derivative(P0, GRIP, ModuleState(), motor_torque=0.05)
    # pendulum and shell accelerate in opposite directions
    assert D[7] * D[6] < 0


def test_two_module_derivative_contact_and_magnet():
    p = ModuleParams()
    link = MagnetLink(np.array([0.0, 0.01]), np.array([5.0, 0.0]))
    w = WorldState((ModuleState(x=-0.0601), ModuleState(x=0.0601)), (p, p))
    D, (gap, fm, fn) = two_module_derivative(w, SimConfig(), link=link)
    assert gap == pytest.approx(2e-4)
    assert fm == pytest.approx(5.0 * (1 - 0.02), rel=1e-9)
    assert fn == 0.0
    deep = WorldState((ModuleState(x=-0.05), ModuleState(x=0.05)), (p, p))
    with pytest.raises(ContactError):
        two_module_derivative(deep, SimConfig(), link=link)


def test_step_advances_time():
    w = WorldState((ModuleState(theta=0.1),), (P0,))
    w2 = step(w, SimConfig(dt=1e-3))
    assert w2.t == pytest.approx(1e-3)
    assert w2.modules[0].theta < 0.1


def test_trajectory_csv_roundtrip(tmp_path):
    spec = sc.scenario_coupling(duration=0.05).runs[0]
    log = run(spec.world, spec.config, [c.build() for c in spec.controllers], spec.link.build())
    log.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header.startswith("t,module,x,x_dot,phi,phi_dot,theta,theta_dot,u,regime,gap,coupled")
    back = TrajectoryLog.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.states, log.states)
    assert np.array_equal(back.t, log.t)
    assert np.array_equal(back.regime, log.regime)


def test_world_geometry():
    p = ModuleParams()
    w = WorldState((ModuleState(x=0.0), ModuleState(x=0.125)), (p,))
    assert w.gap == pytest.approx(0.005)
    assert not w.coupled
    assert WorldState((ModuleState(), ModuleState(x=0.1205)), (p,)).coupled


def test_invalid_inputs():
    with pytest.raises(InvalidParameterError):
        SimConfig(dt=0.01)
    with pytest.raises(InvalidParameterError):
        SimConfig(duration=0.0)
    with pytest.raises(InvalidParameterError):
        ModuleState(regime="flying")
    with pytest.raises(InvalidParameterError):
        ModuleState(x=float("nan"))
    with pytest.raises(InvalidParameterError):
        FrictionParams(mu_s=0.1, mu_k=0.2)
    with pytest.raises(InvalidParameterError):
        WorldState((), ())


def test_simulator_reuse():
    w = WorldState((ModuleState(theta=0.2),), (P0,))
    sim = Simulator(w, SimConfig(dt=1e-3))
    for _ in range(10):
        sim.step(np.zeros(1, dtype=np.int64), np.zeros(1))
    assert sim.t == pytest.approx(0.01)
    assert sim.world().modules[0].theta != 0.2


def test_hard_stop_limits_relative_angle():
    motor = MotorParams(stop_angle=math.radians(30))
    w = WorldState((ModuleState(regime="anchored"),), (ModuleParams(),))
    log = run(w, SimConfig(duration=3.0, motor=motor), [SpeedCommand(3.0)])
    assert np.abs(log.column("theta")).max() < math.radians(40)


def test_passive_controller_matches_no_controller():
    w = WorldState((ModuleState(theta=0.3),), (P0,))
    a = run(w, SimConfig(duration=0.2))
    b = run(w, SimConfig(duration=0.2), [Passive()])
    assert np.array_equal(a.states, b.states)


def test_contact_params_validation():
    with pytest.raises(InvalidParameterError):
        ContactParams(stiffness=-1)
