"""Linearised cart-pendulum model of one module and its stability analysis.

Polynomials are :class:`numpy.polynomial.Polynomial` instances (ascending
coefficients). Root finding, the Routh table and the transfer-function algebra
are implemented here so that the Routh verdict and the pole computation stay
two independent routes to the same answer.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DegenerateModelError, InvalidParameterError

MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class ModuleParams:
    """Physical constants of one disk module (SI units).

    ``I`` is the pendulum's moment of inertia about its own centre of mass,
    which is how it enters the cart-pendulum denominator ``I + m l^2``.
    """

    M: float = 0.172
    m: float = 0.094
    l: float = 0.060
    I: float = 3.384e-3
    b: float = 0.01
    r: float = 0.060
    g: float = 9.81

    def __post_init__(self):
        for name in ("M", "l", "I", "r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be positive, got {v!r}")
        if not (math.isfinite(self.m) and self.m >= 0):
            raise InvalidParameterError("m must be non-negative")
        if not (math.isfinite(self.b) and self.b >= 0):
            raise InvalidParameterError("b must be non-negative")
        if not (math.isfinite(self.g) and self.g >= 0):
            raise InvalidParameterError("g must be non-negative")

    def with_(self, **kw) -> "ModuleParams":
        return replace(self, **kw)


DEFAULT_PARAMS = ModuleParams(M=0.172, m=0.094, l=0.060, I=3.384e-3, b=0.0)


@dataclass(frozen=True)
class PDGains:
    kp: float = 2.5
    kd: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.kp) and math.isfinite(self.kd)):
            raise InvalidParameterError("gains must be finite")

    @property
    def polynomial(self) -> Polynomial:
        """``C(s) = kp + kd s``."""
        return Polynomial([self.kp, self.kd])


DEFAULT_GAINS = PDGains(2.5, 0.5)


def as_poly(p) -> Polynomial:
    return p if isinstance(p, Polynomial) else Polynomial(np.asarray(p, dtype=float))


def trim(p) -> Polynomial:
    c = np.trim_zeros(np.asarray(as_poly(p).coef, dtype=float), "b")
    return Polynomial(c if c.size else [0.0])


def is_zero(p: Polynomial) -> bool:
    return not np.any(np.asarray(p.coef) != 0)


@dataclass(frozen=True)
class TransferFunction:
    numerator: Polynomial
    denominator: Polynomial

    def __post_init__(self):
        num = trim(self.numerator)
        den = trim(self.denominator)
        if is_zero(den):
            raise DegenerateModelError("denominator is the zero polynomial")
        if not is_zero(num) and num.degree() > den.degree():
            raise InvalidParameterError("improper transfer function")
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "denominator", den)

    def __call__(self, s):
        return self.numerator(s) / self.denominator(s)

    def monic(self) -> "TransferFunction":
        lead = self.denominator.coef[-1]
        return TransferFunction(self.numerator / lead, self.denominator / lead)

    def cancel_origin(self) -> "TransferFunction":
        """Cancel common factors of ``s`` between numerator and denominator."""
        num = np.asarray(self.numerator.coef, dtype=float)
        den = np.asarray(self.denominator.coef, dtype=float)
        while num.size > 1 and den.size > 1 and num[0] == 0 and den[0] == 0:
            num, den = num[1:], den[1:]
        return TransferFunction(Polynomial(num), Polynomial(den))


def q_factor(p: ModuleParams) -> float:
    return (p.M + p.m) * (p.I + p.m * p.l ** 2) - (p.m * p.l) ** 2


def _q_checked(p: ModuleParams) -> float:
    q = q_factor(p)
    if not q > 0:
        raise DegenerateModelError(f"q = {q:g} is not positive")
    return q


def open_loop_tf(p: ModuleParams) -> TransferFunction:
    """Pendulum angle over input force for the inverted cart-pendulum."""
    q = _q_checked(p)
    M, m, l, I, b, g = p.M, p.m, p.l, p.I, p.b, p.g
    num = Polynomial([0.0, m * l / q])
    den = Polynomial([-b * m * g * l / q, -(M + m) * m * g * l / q, b * (I + m * l ** 2) / q, 1.0])
    return TransferFunction(num, den)


def closed_loop_tf(p: ModuleParams, gains: PDGains) -> TransferFunction:
    """``T_p / (1 + C T_p)`` with ``C(s) = kp + kd s``, coefficients written out."""
    q = _q_checked(p)
    M, m, l, I, b, g = p.M, p.m, p.l, p.I, p.b, p.g
    num = Polynomial([0.0, l * m / q])
    den = Polynomial([
        -b * g * l * m / q,
        (gains.kp * l * m - (M + m) * m * g * l) / q,
        (b * (I + m * l ** 2) + gains.kd * l * m) / q,
        1.0,
    ])
    return TransferFunction(num, den)


def feedback(plant: TransferFunction, controller: Polynomial) -> TransferFunction:
    """Generic negative feedback ``P / (1 + C P)`` for a polynomial controller."""
    num = plant.numerator
    den = plant.denominator + controller * plant.numerator
    return TransferFunction(num, den)


# ---------------------------------------------------------------------------
# Roots


def companion(poly: Polynomial) -> np.ndarray:
    c = np.asarray(trim(poly).coef, dtype=float)
    n = c.size - 1
    if n < 1:
        raise DegenerateModelError("polynomial has no roots (degree < 1)")
    mat = np.zeros((n, n))
    mat[1:, :-1] = np.eye(n - 1)
    mat[:, -1] = -c[:-1] / c[-1]
    return mat


def polynomial_roots(poly: Polynomial) -> np.ndarray:
    poly = trim(poly)
    if is_zero(poly):
        raise DegenerateModelError("zero polynomial")
    if poly.degree() < 1:
        return np.array([], dtype=complex)
    return np.linalg.eigvals(companion(poly)).astype(complex)


def poles(tf: TransferFunction) -> np.ndarray:
    return polynomial_roots(tf.denominator)


# ---------------------------------------------------------------------------
# Routh-Hurwitz


@dataclass(frozen=True)
class HurwitzResult:
    verdict: str  # "stable" | "unstable" | "marginal"
    first_column: tuple[float, ...]
    sign_changes: int
    epsilon_substituted: bool

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"


def routh_table(poly: Polynomial, eps: float = 1e-9, zero_tol: float = 1e-12):
    """Full Routh array and whether a zero pivot had to be replaced by ``eps``.

    Pivots are compared against ``zero_tol`` times the largest coefficient.
    """
    c = np.asarray(trim(poly).coef, dtype=float)
    if not np.any(c):
        raise DegenerateModelError("zero polynomial")
    a = c[::-1]  # descending powers
    n = a.size - 1
    if n < 1:
        raise DegenerateModelError("degree must be at least 1")
    width = n // 2 + 1
    rows = np.zeros((n + 1, width))
    rows[0, : a[0::2].size] = a[0::2]
    rows[1, : a[1::2].size] = a[1::2]
    scale = np.max(np.abs(a))
    tiny = zero_tol * scale
    substituted = False
    for i in range(2, n + 2):
        if abs(rows[i - 1, 0]) <= tiny:
            rows[i - 1, 0] = eps * scale
            substituted = True
        if i > n:
            break
        prev, prev2 = rows[i - 1], rows[i - 2]
        for j in range(width - 1):
            rows[i, j] = (prev[0] * prev2[j + 1] - prev2[0] * prev[j + 1]) / prev[0]
    return rows, substituted


def hurwitz_test(poly: Polynomial) -> HurwitzResult:
    """Routh-Hurwitz verdict for ``poly``.

    Stable iff every first-column entry has the sign of the leading coefficient.
    A zero pivot is replaced by a small epsilon and the verdict is then
    ``"marginal"`` unless sign changes already prove instability.
    """
    rows, substituted = routh_table(poly)
    col = rows[:, 0]
    signs = np.sign(col)
    changes = int(np.sum(signs[1:] != signs[:-1]))
    if changes:
        verdict = "unstable"
    elif substituted:
        verdict = "marginal"
    else:
        verdict = "stable"
    return HurwitzResult(verdict, tuple(float(v) for v in col), changes, substituted)


def pole_verdict(poly: Polynomial, tol: float = MARGINAL_TOL) -> str:
    """Stability from the roots: the oracle route for :func:`hurwitz_test`."""
    re = polynomial_roots(poly).real
    worst = re.max()
    if worst < -tol:
        return "stable"
    if worst > tol:
        return "unstable"
    return "marginal"


# ---------------------------------------------------------------------------
# The two published gain inequalities


@dataclass(frozen=True)
class GainConditions:
    damping_ok: bool
    stiffness_ok: bool
    damping_margin: float
    stiffness_margin: float
    kp_min: float
    warnings: tuple[str, ...] = ()

    @property
    def both(self) -> bool:
        return self.damping_ok and self.stiffness_ok


def gain_conditions(p: ModuleParams, gains: PDGains) -> GainConditions:
    """Evaluate ``b(I+ml^2) + kd l m > 0`` and ``kp l m - (M+m) m g l > 0``.

    The second inequality reduces to ``kp > (M+m) g``, reported as ``kp_min``.
    """
    _q_checked(p)
    notes = []
    if p.m >= p.M:
        msg = "pendulum mass is not smaller than body mass; the inequalities assume m < M"
        notes.append(msg)
        warnings.warn(msg, stacklevel=2)
    d = p.b * (p.I + p.m * p.l ** 2) + gains.kd * p.l * p.m
    s = gains.kp * p.l * p.m - (p.M + p.m) * p.m * p.g * p.l
    return GainConditions(d > 0, s > 0, d, s, (p.M + p.m) * p.g, tuple(notes))


@dataclass(frozen=True)
class GainAnalysis:
    conditions: GainConditions
    hurwitz: HurwitzResult
    poles: np.ndarray
    denominator: tuple[float, ...]  # ascending

    @property
    def constant_term(self) -> float:
        return self.denominator[0]


def analyse_gains(p: ModuleParams, gains: PDGains) -> GainAnalysis:
    tf = closed_loop_tf(p, gains)
    return GainAnalysis(
        gain_conditions(p, gains),
        hurwitz_test(tf.denominator),
        poles(tf),
        tuple(float(c) for c in tf.denominator.coef),
    )


@dataclass
class GainRegion:
    kp: np.ndarray
    kd: np.ndarray
    verdicts: np.ndarray  # (n_kp, n_kd) of str

    @property
    def stable(self) -> np.ndarray:
        return self.verdicts == "stable"

    def rows(self):
        for i, kp in enumerate(self.kp):
            for j, kd in enumerate(self.kd):
                yield float(kp), float(kd), bool(self.verdicts[i, j] == "stable")

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kp", "kd", "stable"])
            for kp, kd, st in self.rows():
                w.writerow([repr(kp), repr(kd), int(st)])
        return path


def stable_gain_region(p: ModuleParams, kp_range: Sequence[float], kd_range: Sequence[float],
                       n: int = 21, cancel_origin: bool = False) -> GainRegion:
    """Hurwitz verdict of the closed-loop denominator on an ``n x n`` gain grid.

    With ``cancel_origin`` the pole-zero pair at ``s = 0`` (present when
    ``b = 0`` or ``g = 0``) is cancelled before testing, i.e. the angle channel's
    minimal realisation is judged instead of the full denominator.
    """
    if n < 2:
        raise InvalidParameterError("grid needs n >= 2")
    kps = np.linspace(kp_range[0], kp_range[1], n)
    kds = np.linspace(kd_range[0], kd_range[1], n)
    out = np.empty((n, n), dtype=object)
    for i, kp in enumerate(kps):
        for j, kd in enumerate(kds):
            tf = closed_loop_tf(p, PDGains(kp, kd))
            if cancel_origin:
                tf = tf.cancel_origin()
            if tf.denominator.degree() < 1:
                out[i, j] = "stable"
            else:
                out[i, j] = hurwitz_test(tf.denominator).verdict
    return GainRegion(kps, kds, out.astype(str))


# ---------------------------------------------------------------------------
# Linear simulation


def cart_pendulum_matrices(p: ModuleParams, hanging: bool = False):
    """State-space ``(A, B)`` with state ``[x, x_dot, theta, theta_dot]``, input force.

    ``hanging=False`` realises :func:`open_loop_tf` exactly (angle measured from
    upright); ``hanging=True`` is the same model about the lower equilibrium,
    i.e. with the sign of ``g`` reversed.
    """
    q = _q_checked(p)
    M, m, l, I, b = p.M, p.m, p.l, p.I, p.b
    g = -p.g if hanging else p.g
    J = I + m * l ** 2
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -J * b / q, m * m * g * l * l / q, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, -m * l * b / q, m * g * l * (M + m) / q, 0.0],
    ])
    B = np.array([0.0, J / q, 0.0, m * l / q])
    return A, B


def state_space_tf(A, B, C) -> TransferFunction:
    """``C (sI - A)^-1 B`` via the characteristic polynomial (Faddeev-LeVerrier)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    coeffs = [1.0]
    Mk = np.eye(n)
    adj_terms = []
    for k in range(1, n + 1):
        adj_terms.append(Mk)
        AM = A @ Mk
        ck = -np.trace(AM) / k
        coeffs.append(ck)
        Mk = AM + ck * np.eye(n)
    # det(sI - A) = s^n + c1 s^(n-1) + ... ; adj(sI - A) = sum M_k s^(n-k)
    den = Polynomial(coeffs[::-1])
    num_desc = [float(np.asarray(C) @ Mk_ @ np.asarray(B)) for Mk_ in adj_terms]
    num = Polynomial(num_desc[::-1])
    return TransferFunction(num, den)


def rk4_linear(A, B, x0, u, dt: float) -> np.ndarray:
    """Integrate ``x' = A x + B u_k`` with input held over each step."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    x = np.array(x0, dtype=float)
    out = np.empty((len(u) + 1, x.size))
    out[0] = x
    for k, uk in enumerate(u):
        bu = B * uk
        k1 = A @ x + bu
        k2 = A @ (x + 0.5 * dt * k1) + bu
        k3 = A @ (x + 0.5 * dt * k2) + bu
        k4 = A @ (x + dt * k3) + bu
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = x
    return out


def simulate_tf(tf: TransferFunction, u, dt: float) -> np.ndarray:
    """Zero-state response of a strictly proper ``tf`` to samples ``u`` (held)."""
    tf = tf.monic()
    den = np.asarray(tf.denominator.coef, dtype=float)
    n = den.size - 1
    num = np.zeros(n)
    nc = np.asarray(tf.numerator.coef, dtype=float)
    if nc.size > n:
        raise InvalidParameterError("simulate_tf needs a strictly proper transfer function")
    num[: nc.size] = nc
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:-1]
    B = np.zeros(n)
    B[-1] = 1.0
    xs = rk4_linear(A, B, np.zeros(n), u, dt)
    return xs @ num
