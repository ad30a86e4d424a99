import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import Polynomial

from diskbot.errors import DegenerateModelError, InvalidParameterError
from diskbot.linmodel import (DEFAULT_GAINS, DEFAULT_PARAMS, ModuleParams, PDGains, analyse_gains,
                              cart_pendulum_matrices, closed_loop_tf, hurwitz_test, open_loop_tf,
                              gain_conditions, pole_verdict, poles, q_factor, rk4_linear,
                              routh_table, simulate_tf, stable_gain_region, state_space_tf,
                              TransferFunction)

M, m, l, I, g = Fr("0.172"), Fr("0.094"), Fr("0.060"), Fr("3.384e-3"), Fr("9.81")


def test_q_exact():
    q = (M + m) * (I + m * l ** 2) - (m * l) ** 2
    assert q_factor(DEFAULT_PARAMS) == pytest.approx(float(q), rel=1e-12)
    assert q_factor(DEFAULT_PARAMS) == pytest.approx(9.58e-4, rel=1e-3)


def test_open_loop_against_lagrangian_solve():
    # theta/F from the linearised equations of motion, solved at sample points
    p = ModuleParams(b=0.3)
    tf = open_loop_tf(p)
    for s in (0.7, 2.0 + 1.5j, -0.3 + 4j, 11.0):
        A = np.array([[(p.M + p.m) * s ** 2 + p.b * s, -p.m * p.l * s ** 2],
                      [-p.m * p.l * s ** 2, (p.I + p.m * p.l ** 2) * s ** 2 - p.m * p.g * p.l]])
        x, th = np.linalg.solve(A, np.array([1.0, 0.0]))
        assert tf(s) == pytest.approx(th, rel=1e-10)


def test_closed_loop_is_feedback_of_open_loop():
    p = ModuleParams(b=0.05)
    gains = PDGains(3.0, 0.4)
    ol, cl = open_loop_tf(p), closed_loop_tf(p, gains)
    for s in (0.5, 1 + 1j, 3j):
        ref = ol(s) / (1 + (gains.kp + gains.kd * s) * ol(s))
        assert cl(s) == pytest.approx(ref, rel=1e-10)


def test_state_space_realises_open_loop():
    p = ModuleParams(b=0.2)
    A, B = cart_pendulum_matrices(p)
    tf = state_space_tf(A, B, np.array([0, 0, 1.0, 0]))
    for s in (0.9, 2 + 1j):
        assert tf(s) == pytest.approx(open_loop_tf(p)(s), rel=1e-9)


def test_kp_threshold_and_deployed_gain_violation():
    c = gain_conditions(DEFAULT_PARAMS, DEFAULT_GAINS)
    assert c.kp_min == pytest.approx(float((M + m) * g), rel=1e-12)
    assert c.kp_min == pytest.approx(2.6095, abs=5e-5)
    assert c.damping_ok and not c.stiffness_ok and not c.both


def test_mass_assumption_warning():
    with pytest.warns(UserWarning):
        c = gain_conditions(ModuleParams(M=0.05), DEFAULT_GAINS)
    assert c.warnings


def test_constant_term_negative_for_damped_plant():
    p = ModuleParams(b=0.01)
    res = analyse_gains(p, PDGains(10.0, 1.0))
    ref = -p.b * p.g * p.l * p.m / q_factor(p)
    assert res.constant_term == pytest.approx(ref, rel=1e-12)
    assert res.constant_term < 0
    assert res.hurwitz.verdict == "unstable"


def test_undamped_loop_marginal_at_best():
    res = analyse_gains(DEFAULT_PARAMS, PDGains(5.0, 0.5))
    assert res.constant_term == 0.0
    assert res.hurwitz.verdict == "marginal"


def test_routh_known_polynomials():
    assert hurwitz_test(Polynomial([6, 11, 6, 1])).verdict == "stable"  # (s+1)(s+2)(s+3)
    assert hurwitz_test(Polynomial([-6, 11, -6, 1])).verdict == "unstable"
    assert hurwitz_test(Polynomial([1, 0, 1])).verdict == "marginal"  # s^2 + 1
    rows, sub = routh_table(Polynomial([6, 11, 6, 1]))
    assert rows[:, 0] == pytest.approx([1, 6, 10, 6])
    assert not sub


def test_degenerate_polynomial():
    with pytest.raises(DegenerateModelError):
        hurwitz_test(Polynomial([0.0]))
    with pytest.raises(DegenerateModelError):
        hurwitz_test(Polynomial([3.0]))


def _random_poly(rng, degree):
    roots = []
    while len(roots) < degree:
        if degree - len(roots) >= 2 and rng.random() < 0.5:
            z = complex(rng.normal(), rng.normal() * 2)
            roots += [z, z.conjugate()]
        else:
            roots.append(rng.normal())
    return Polynomial(np.real(np.poly(roots))[::-1] * rng.uniform(0.2, 5))


def test_hurwitz_agrees_with_roots():
    rng = np.random.default_rng(1234)
    checked = 0
    for k in range(1200):
        poly = _random_poly(rng, 3 + k % 2)
        worst = np.roots(poly.coef[::-1]).real.max()
        if abs(worst) <= 1e-9:
            continue
        expect = "stable" if worst < 0 else "unstable"
        assert hurwitz_test(poly).verdict == expect
        assert pole_verdict(poly) == expect
        checked += 1
    assert checked >= 1000


def test_gain_region_grid_and_csv(tmp_path):
    reg = stable_gain_region(DEFAULT_PARAMS, (0, 6), (0, 1), n=2)
    assert reg.verdicts.shape == (2, 2)
    text = reg.to_csv(tmp_path / "g.csv").read_text().splitlines()
    assert text[0] == "kp,kd,stable" and len(text) == 5
    with pytest.raises(InvalidParameterError):
        stable_gain_region(DEFAULT_PARAMS, (0, 6), (0, 1), n=1)


def test_gain_region_cancel_origin():
    # undamped plant: the s=0 pole cancels and kp > (M+m)g, kd > 0 is stable
    reg = stable_gain_region(DEFAULT_PARAMS, (3, 6), (0.1, 1), n=4, cancel_origin=True)
    assert reg.stable.all()
    full = stable_gain_region(DEFAULT_PARAMS, (3, 6), (0.1, 1), n=4)
    assert not full.stable.any()


def test_poles_of_closed_loop():
    p = ModuleParams(b=0.0, g=0.0)
    z = poles(closed_loop_tf(p, PDGains(3.0, 0.5)))
    assert np.sort(np.abs(z))[0] == pytest.approx(0.0, abs=1e-12)


def test_simulate_tf_matches_state_space():
    p = ModuleParams(b=0.2)
    A, B = cart_pendulum_matrices(p, hanging=True)
    tf = state_space_tf(A, B, np.array([0, 0, 1.0, 0]))
    dt = 1e-3
    u = np.sin(np.arange(2000) * dt * 3)
    ss = rk4_linear(A, B, np.zeros(4), u, dt)[:, 2]
    y = simulate_tf(tf, u, dt)
    assert np.abs(y - ss).max() <= 1e-8 * np.abs(ss).max()


def test_bad_params():
    with pytest.raises(InvalidParameterError):
        ModuleParams(M=-1)
    with pytest.raises(InvalidParameterError):
        PDGains(float("nan"), 1.0)


@settings(max_examples=40, deadline=None)
@given(kp=st.floats(0.1, 20), kd=st.floats(0.01, 5), b=st.floats(0.001, 1))
def test_property_hurwitz_matches_poles_for_loop(kp, kd, b):
    poly = closed_loop_tf(ModuleParams(b=b), PDGains(kp, kd)).denominator
    worst = np.roots(poly.coef[::-1]).real.max()
    if abs(worst) > 1e-9:
        assert hurwitz_test(poly).verdict == ("stable" if worst < 0 else "unstable")


def test_q_formula_collapse_and_scaling():
    assert q_factor(ModuleParams(m=0.0)) == pytest.approx(0.172 * 3.384e-3, rel=1e-15)
    p = ModuleParams(I=0.094 * 0.06 ** 2)
    ref = (p.M + p.m) * (2 * p.m * p.l ** 2) - (p.m * p.l) ** 2
    assert q_factor(p) == pytest.approx(ref, rel=1e-14)


def test_undamped_open_loop_denominator_and_poles():
    q = (M + m) * (I + m * l ** 2) - (m * l) ** 2
    a = float((M + m) * m * g * l / q)
    assert a == pytest.approx(15.357, abs=5e-4)
    tf = open_loop_tf(DEFAULT_PARAMS)
    assert np.allclose(tf.denominator.coef, [0.0, -a, 0.0, 1.0], rtol=1e-12, atol=0)
    assert tf.numerator.coef[1] == pytest.approx(5.885, rel=1e-3)
    z = np.sort(poles(tf).real)
    assert z == pytest.approx([-math.sqrt(a), 0.0, math.sqrt(a)], abs=1e-8)
    assert np.allclose(open_loop_tf(DEFAULT_PARAMS.with_(g=0.0)).denominator.coef, [0, 0, 0, 1])


def test_zero_gains_give_open_loop():
    p = ModuleParams(b=0.03)
    a = closed_loop_tf(p, PDGains(0.0, 0.0)).denominator.coef
    b = open_loop_tf(p).denominator.coef
    assert np.allclose(a, b, rtol=1e-12, atol=0)
    assert closed_loop_tf(DEFAULT_PARAMS, DEFAULT_GAINS).denominator.coef[0] == 0.0


def test_deployed_gains_s_coefficient_negative():
    q = (M + m) * (I + m * l ** 2) - (m * l) ** 2
    ref = float((Fr("2.5") * l * m - (M + m) * m * g * l) / q)
    c1 = closed_loop_tf(DEFAULT_PARAMS, DEFAULT_GAINS).denominator.coef[1]
    assert c1 == pytest.approx(ref, rel=1e-12) and c1 < 0


def test_vieta_on_random_stable_cubics():
    rng = np.random.default_rng(5)
    for _ in range(50):
        coef = np.real(np.poly(-rng.uniform(0.1, 5, 3)))[::-1] * rng.uniform(0.5, 2)
        z = poles(TransferFunction(Polynomial([1.0]), Polynomial(coef)))
        a0, a1, a2, a3 = coef
        assert np.prod(z).real == pytest.approx(-a0 / a3, rel=1e-8)
        assert np.sum(z).real == pytest.approx(-a2 / a3, rel=1e-8)


def test_known_root_sets():
    z = np.sort(poles(TransferFunction(Polynomial([1.0]), Polynomial([6, 11, 6, 1]))).real)
    assert z == pytest.approx([-3, -2, -1], abs=1e-8)
    assert hurwitz_test(Polynomial([1, 3, 3, 1])).verdict == "stable"
    assert hurwitz_test(Polynomial([-1, -1, 1, 1])).verdict == "unstable"


@given(scale=st.floats(0.1, 10), kp=st.floats(0.1, 6))
def test_condition_two_invariant_to_arm_rescaling(scale, kp):
    base = gain_conditions(DEFAULT_PARAMS, PDGains(kp, 0.5)).stiffness_ok
    p = DEFAULT_PARAMS.with_(l=DEFAULT_PARAMS.l * scale)
    assert gain_conditions(p, PDGains(kp, 0.5)).stiffness_ok == base
