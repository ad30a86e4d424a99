"""Compiled core of the planar simulator.

Each module has generalized coordinates ``q = (x, y, phi, theta)`` and the
state row ``[x, y, phi, theta, x_dot, y_dot, phi_dot, theta_dot]``.

Angles are clockwise-positive. ``phi`` is the shell rotation, so pure rolling
reads ``x_dot = r phi_dot``. ``theta`` is the pendulum angle from the downward
vertical; the pendulum centre of mass sits at ``(x - l sin theta, y - l cos theta)``
and the magnet array at the pendulum tip, radius ``r`` from the shell centre.

Lagrangian (shell mass M with inertia M r^2 / 2, pendulum mass m with inertia I
about its centre of mass):

    T = 1/2 (M + m)(x'^2 + y'^2) + 1/2 Ic phi'^2 + 1/2 (I + m l^2) theta'^2
        - m l cos(theta) x' theta' + m l sin(theta) y' theta'
    V = (M + m) g y - m g l cos(theta)

The motor applies torque ``tau`` to the pendulum and ``-tau`` to the shell.
"""
import numpy as np
from numba import njit

# contact regimes
STICK = 0
SLIP = 1
AIRBORNE = 2
ANCHORED = 3
TABLE = 4

# motor modes
MOTOR_OFF = 0
MOTOR_SPEED = 1
MOTOR_TORQUE = 2

# status codes returned by step_world
OK = 0
LIFT_OFF = 1
PENETRATION = 2
NON_FINITE = 3

# module parameter row
P_M, P_m, P_l, P_I, P_b, P_r, P_g = range(7)
# settings vector
(S_UPRIGHT, S_MU_S, S_MU_K, S_MU_DISK, S_V_EPS, S_V_REG, S_K_CONTACT, S_C_CONTACT,
 S_PEN_MAX, S_KS, S_TAU_MAX, S_STOP, S_K_STOP, S_C_STOP, S_MAGNET) = range(15)
N_SETTINGS = 15


@njit(cache=True)
def _solve(A, b):
    n = b.shape[0]
    A = A.copy()
    x = b.copy()
    for k in range(n):
        piv = k
        big = abs(A[k, k])
        for i in range(k + 1, n):
            if abs(A[i, k]) > big:
                big = abs(A[i, k])
                piv = i
        if piv != k:
            for j in range(n):
                A[k, j], A[piv, j] = A[piv, j], A[k, j]
            x[k], x[piv] = x[piv], x[k]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                for j in range(k, n):
                    A[i, j] -= f * A[k, j]
                x[i] -= f * x[k]
    for k in range(n - 1, -1, -1):
        acc = x[k]
        for j in range(k + 1, n):
            acc -= A[k, j] * x[j]
        x[k] = acc / A[k, k]
    return x


@njit(cache=True)
def mass_matrix(s, p):
    M, m, l, I, r = p[P_M], p[P_m], p[P_l], p[P_I], p[P_r]
    c, sn = np.cos(s[3]), np.sin(s[3])
    Mq = np.zeros((4, 4))
    Mq[0, 0] = M + m
    Mq[1, 1] = M + m
    Mq[2, 2] = 0.5 * M * r * r
    Mq[3, 3] = I + m * l * l
    Mq[0, 3] = Mq[3, 0] = -m * l * c
    Mq[1, 3] = Mq[3, 1] = m * l * sn
    return Mq


@njit(cache=True)
def motor_torque(s, mode, cmd, st):
    """Torque on the pendulum (the shell receives the opposite)."""
    rel = s[3] - s[2]
    rel_rate = s[7] - s[6]
    tau = 0.0
    if mode == MOTOR_SPEED:
        tau = st[S_KS] * (cmd - rel_rate)
        tmax = st[S_TAU_MAX]
        if tau > tmax:
            tau = tmax
        elif tau < -tmax:
            tau = -tmax
    elif mode == MOTOR_TORQUE:
        tau = cmd
    stop = st[S_STOP]
    if stop > 0.0:
        if rel > stop:
            tau -= st[S_K_STOP] * (rel - stop) + st[S_C_STOP] * max(rel_rate, 0.0)
        elif rel < -stop:
            tau -= st[S_K_STOP] * (rel + stop) + st[S_C_STOP] * min(rel_rate, 0.0)
    return tau


@njit(cache=True)
def generalized_forces(s, p, st, tau, qext):
    """Right-hand side ``Q`` of ``Mq a = Q`` without contact reactions."""
    M, m, l, b = p[P_M], p[P_m], p[P_l], p[P_b]
    g = p[P_g] if st[S_UPRIGHT] > 0.5 else 0.0
    c, sn = np.cos(s[3]), np.sin(s[3])
    thd = s[7]
    Q = np.empty(4)
    Q[0] = -m * l * sn * thd * thd - b * s[4] + qext[0]
    Q[1] = -m * l * c * thd * thd - (M + m) * g - b * s[5] + qext[1]
    Q[2] = -tau + qext[2]
    Q[3] = tau - m * g * l * sn + qext[3]
    return Q


@njit(cache=True)
def _stick_solve(Mq, Q, r):
    # rows: normal n = (0, 1, 0, 0), tangential t = (1, 0, -r, 0)
    K = np.zeros((6, 6))
    rhs = np.zeros(6)
    for i in range(4):
        rhs[i] = Q[i]
        for j in range(4):
            K[i, j] = Mq[i, j]
    K[1, 4] = -1.0
    K[0, 5] = -1.0
    K[2, 5] = r
    K[4, 1] = 1.0
    K[5, 0] = 1.0
    K[5, 2] = -r
    return _solve(K, rhs)


@njit(cache=True)
def _slip_solve(Mq, Q, r, mu, sgn):
    # friction -mu N sgn at the contact point, N unknown
    K = np.zeros((5, 5))
    rhs = np.zeros(5)
    for i in range(4):
        rhs[i] = Q[i]
        for j in range(4):
            K[i, j] = Mq[i, j]
    K[1, 4] = -1.0
    K[0, 4] = mu * sgn
    K[2, 4] = -r * mu * sgn
    K[4, 1] = 1.0
    return _solve(K, rhs)


@njit(cache=True)
def _sat(v, vreg):
    x = v / vreg
    if x > 1.0:
        return 1.0
    if x < -1.0:
        return -1.0
    return x


@njit(cache=True)
def module_accel(s, regime, p, st, tau, qext, forces):
    """Accelerations ``(x, y, phi, theta)``; ``forces`` receives ``(N, F_t)``."""
    Mq = mass_matrix(s, p)
    Q = generalized_forces(s, p, st, tau, qext)
    r = p[P_r]
    a = np.zeros(4)
    forces[0] = 0.0
    forces[1] = 0.0
    if regime == STICK:
        z = _stick_solve(Mq, Q, r)
        a[:] = z[:4]
        forces[0] = z[4]
        forces[1] = z[5]
    elif regime == SLIP:
        vc = s[4] - r * s[6]
        if abs(vc) >= st[S_V_EPS]:
            sgn = 1.0 if vc > 0.0 else -1.0
            z = _slip_solve(Mq, Q, r, st[S_MU_K], sgn)
            a[:] = z[:4]
            forces[0] = z[4]
            forces[1] = -st[S_MU_K] * z[4] * sgn
        else:
            # Karnopp band: hold if the required force is within static friction
            z = _stick_solve(Mq, Q, r)
            if abs(z[5]) <= st[S_MU_S] * z[4]:
                a[:] = z[:4]
                forces[0] = z[4]
                forces[1] = z[5]
            else:
                sgn = -1.0 if z[5] > 0.0 else 1.0
                z = _slip_solve(Mq, Q, r, st[S_MU_K], sgn)
                a[:] = z[:4]
                forces[0] = z[4]
                forces[1] = -st[S_MU_K] * z[4] * sgn
    elif regime == ANCHORED:
        a[3] = Q[3] / Mq[3, 3]
    else:
        if regime == TABLE:
            W = (p[P_M] + p[P_m]) * p[P_g] * st[S_MU_K]
            vx, vy = s[4], s[5]
            speed = np.sqrt(vx * vx + vy * vy)
            if speed > 0.0:
                f = W * _sat(speed, st[S_V_REG]) / speed
                Q[0] -= f * vx
                Q[1] -= f * vy
            arm = 2.0 * r / 3.0
            Q[2] -= W * arm * _sat(s[6] * arm, st[S_V_REG])
        a[:] = _solve(Mq, Q)
    return a


@njit(cache=True)
def _add_rim_force(qext, r, nx, ny, fx, fy):
    qext[0] += fx
    qext[1] += fy
    qext[2] += r * (ny * fx - nx * fy)


@njit(cache=True)
def _add_tip_force(qext, r, theta, fx, fy):
    qext[0] += fx
    qext[1] += fy
    qext[3] += r * (-np.cos(theta) * fx + np.sin(theta) * fy)


@njit(cache=True)
def interaction(S, P, st, link_gaps, link_forces, qext, info):
    """Magnet and shell-shell contact forces between two modules.

    The magnet attraction has the magnitude of the link table at the shell gap
    and acts between the two pendulum tips.

    Fills ``qext`` (2, 4) and ``info = (gap, magnet force, contact normal,
    penetration)``.
    """
    s1, s2 = S[0], S[1]
    r1, r2 = P[0, P_r], P[1, P_r]
    dx = s2[0] - s1[0]
    dy = s2[1] - s1[1]
    d = np.sqrt(dx * dx + dy * dy)
    ex, ey = dx / d, dy / d
    gap = d - r1 - r2
    fm = 0.0
    if st[S_MAGNET] > 0.5:
        gc = max(gap, 0.0)
        if gc <= link_gaps[-1]:
            fm = np.interp(gc, link_gaps, link_forces)
        # act along the line joining the arrays so action and reaction are
        # collinear and the pair gains no spurious angular momentum
        ux = dx - r2 * np.sin(s2[3]) + r1 * np.sin(s1[3])
        uy = dy - r2 * np.cos(s2[3]) + r1 * np.cos(s1[3])
        du = np.sqrt(ux * ux + uy * uy)
        mx, my = ex, ey
        if du > 1e-12:
            mx, my = ux / du, uy / du
        _add_tip_force(qext[0], r1, s1[3], fm * mx, fm * my)
        _add_tip_force(qext[1], r2, s2[3], -fm * mx, -fm * my)
    fn = 0.0
    if gap < 0.0:
        pen = -gap
        pen_rate = -((s2[4] - s1[4]) * ex + (s2[5] - s1[5]) * ey)
        fn = st[S_K_CONTACT] * pen + st[S_C_CONTACT] * pen_rate
        if fn < 0.0:
            fn = 0.0
        # both shells are pushed at the midpoint of the overlap, so the
        # friction pair has no lever arm between its two halves
        a1 = r1 - 0.5 * pen
        a2 = r2 - 0.5 * pen
        tx, ty = -ey, ex
        v1x = s1[4] + a1 * s1[6] * ey
        v1y = s1[5] - a1 * s1[6] * ex
        v2x = s2[4] - a2 * s2[6] * ey
        v2y = s2[5] + a2 * s2[6] * ex
        vrel = (v1x - v2x) * tx + (v1y - v2y) * ty
        ff = st[S_MU_DISK] * fn * _sat(vrel, st[S_V_REG])
        _add_rim_force(qext[0], a1, ex, ey, -fn * ex - ff * tx, -fn * ey - ff * ty)
        _add_rim_force(qext[1], a2, -ex, -ey, fn * ex + ff * tx, fn * ey + ff * ty)
    info[0] = gap
    info[1] = fm
    info[2] = fn
    info[3] = -gap if gap < 0.0 else 0.0


@njit(cache=True)
def world_derivative(S, regimes, P, st, modes, cmds, fext, link_gaps, link_forces,
                     forces, info, qext):
    n = S.shape[0]
    qext[:] = 0.0
    for i in range(n):
        qext[i, 0] = fext[i, 0]
        qext[i, 1] = fext[i, 1]
    if n == 2:
        interaction(S, P, st, link_gaps, link_forces, qext, info)
    D = np.empty_like(S)
    for i in range(n):
        s = S[i]
        tau = motor_torque(s, modes[i], cmds[i], st)
        a = module_accel(s, regimes[i], P[i], st, tau, qext[i], forces[i])
        for j in range(4):
            D[i, j] = s[4 + j]
            D[i, 4 + j] = a[j]
        if regimes[i] == ANCHORED:
            for j in range(3):
                D[i, j] = 0.0
    return D


@njit(cache=True)
def _project_rolling(s, p):
    """Remove contact-point slip with an impulse along the rolling constraint."""
    Mq = mass_matrix(s, p)
    r = p[P_r]
    Minv_t = _solve(Mq, np.array([1.0, 0.0, -r, 0.0]))
    Minv_n = _solve(Mq, np.array([0.0, 1.0, 0.0, 0.0]))
    # 2x2 Delassus matrix for rows (n, t)
    a11 = Minv_n[1]
    a12 = Minv_t[1]
    a21 = Minv_n[0] - r * Minv_n[2]
    a22 = Minv_t[0] - r * Minv_t[2]
    e1 = s[5]
    e2 = s[4] - r * s[6]
    det = a11 * a22 - a12 * a21
    l1 = -(a22 * e1 - a12 * e2) / det
    l2 = -(-a21 * e1 + a11 * e2) / det
    for j in range(4):
        s[4 + j] += Minv_n[j] * l1 + Minv_t[j] * l2


@njit(cache=True)
def step_world(S, regimes, P, st, modes, cmds, fext, link_gaps, link_forces, dt,
               forces, info):
    """One RK4 step in place, then regime transitions. Returns a status code."""
    qext = np.zeros((S.shape[0], 4))
    k1 = world_derivative(S, regimes, P, st, modes, cmds, fext, link_gaps, link_forces, forces, info, qext)
    k2 = world_derivative(S + 0.5 * dt * k1, regimes, P, st, modes, cmds, fext, link_gaps, link_forces, forces, info, qext)
    k3 = world_derivative(S + 0.5 * dt * k2, regimes, P, st, modes, cmds, fext, link_gaps, link_forces, forces, info, qext)
    k4 = world_derivative(S + dt * k3, regimes, P, st, modes, cmds, fext, link_gaps, link_forces, forces, info, qext)
    n = S.shape[0]
    for i in range(n):
        for j in range(8):
            S[i, j] += dt / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
            if not np.isfinite(S[i, j]):
                return NON_FINITE
    # contact forces at the new state decide the next regime
    world_derivative(S, regimes, P, st, modes, cmds, fext, link_gaps, link_forces, forces, info, qext)
    if n == 2 and info[3] > st[S_PEN_MAX]:
        return PENETRATION
    for i in range(n):
        reg = regimes[i]
        if reg == STICK:
            N, Ft = forces[i, 0], forces[i, 1]
            if N < 0.0:
                return LIFT_OFF
            if abs(Ft) > st[S_MU_S] * N:
                regimes[i] = SLIP
        elif reg == SLIP:
            if forces[i, 0] < 0.0:
                return LIFT_OFF
            r = P[i, P_r]
            if abs(S[i, 4] - r * S[i, 6]) < st[S_V_EPS]:
                s = S[i]
                tau = motor_torque(s, modes[i], cmds[i], st)
                fr = np.zeros(2)
                module_accel(s, STICK, P[i], st, tau, qext[i], fr)
                if fr[0] >= 0.0 and abs(fr[1]) <= st[S_MU_S] * fr[0]:
                    regimes[i] = STICK
                    _project_rolling(S[i], P[i])
                    forces[i, 0] = fr[0]
                    forces[i, 1] = fr[1]
    return OK
