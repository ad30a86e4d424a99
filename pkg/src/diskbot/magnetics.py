"""Analytic magnet-array models.

Cells are uniformly magnetised cuboids whose magnetisation is parallel to the
array normal (the local ``z`` axis). The exterior field of a cell is computed
with the equivalent surface-charge model: the two pole faces carry uniform
magnetic charge ``+/-Br/mu0`` and every other face is uncharged, which gives a
closed form per rectangle. Cell-to-cell forces between two facing arrays use the
point-dipole reduction instead, which is cheap enough to tabulate for the
simulator.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlwaysDecoupledError,
    DomainError,
    InvalidParameterError,
    UnknownPresetError,
)

MU0 = 4e-7 * math.pi
STANDARD_GRAVITY = 9.81

# Values quoted for the prototype's array; REPORTED_* are the published
# results, kept separate from anything this module computes.
POLE_FACE_H = 501.34e3  # A/m
POLE_FACE_AREA = 1.37e-4  # m^2
REPORTED_FORCE = 7.24  # N
REPORTED_LOAD = 0.731  # kg

DEFAULT_CELL_SIZE = (10e-3, 10e-3, 5e-3)
DEFAULT_PITCH = 12e-3
DEFAULT_REMANENCE = 1.32  # T, N42


@dataclass(frozen=True)
class MagnetCell:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    polarity: int = 1
    remanence: float = DEFAULT_REMANENCE

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "half_extents", tuple(float(v) for v in self.half_extents))
        if len(self.center) != 3 or len(self.half_extents) != 3:
            raise InvalidParameterError("center and half_extents must be 3-vectors")
        if min(self.half_extents) <= 0:
            raise InvalidParameterError("half_extents must be strictly positive")
        if self.polarity not in (1, -1):
            raise InvalidParameterError(f"polarity must be +1 or -1, got {self.polarity!r}")
        if not self.remanence > 0:
            raise InvalidParameterError("remanence must be positive")

    @property
    def volume(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * hx * hy * hz

    @property
    def face_area(self) -> float:
        return 4.0 * self.half_extents[0] * self.half_extents[1]

    @property
    def dipole_moment(self) -> float:
        """Signed moment along the array normal, A m^2."""
        return self.polarity * self.remanence * self.volume / MU0

    def contains(self, point, tol: float = 0.0) -> bool:
        d = np.abs(np.asarray(point, dtype=float) - self.center)
        return bool(np.all(d < np.asarray(self.half_extents) - tol))


def _overlap(a: MagnetCell, b: MagnetCell) -> bool:
    for k in range(3):
        if abs(a.center[k] - b.center[k]) >= a.half_extents[k] + b.half_extents[k]:
            return False
    return True


@dataclass(frozen=True)
class MagnetArray:
    cells: tuple[MagnetCell, ...]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise InvalidParameterError("a magnet array needs at least one cell")
        for i, a in enumerate(self.cells):
            for b in self.cells[i + 1:]:
                if _overlap(a, b):
                    raise InvalidParameterError(f"cells at {a.center} and {b.center} overlap")

    def __len__(self):
        return len(self.cells)

    @property
    def total_face_area(self) -> float:
        return sum(c.face_area for c in self.cells)

    @property
    def front_plane(self) -> float:
        """Largest ``z`` reached by any cell (the face that meets a partner)."""
        return max(c.center[2] + c.half_extents[2] for c in self.cells)

    def negated(self, name: str | None = None) -> "MagnetArray":
        cells = [MagnetCell(c.center, c.half_extents, -c.polarity, c.remanence) for c in self.cells]
        return MagnetArray(cells, name or f"{self.name}-negated")

    def scaled(self, remanence_factor: float) -> "MagnetArray":
        cells = [MagnetCell(c.center, c.half_extents, c.polarity, c.remanence * remanence_factor)
                 for c in self.cells]
        return MagnetArray(cells, self.name)

    def _arrays(self):
        centers = np.array([c.center for c in self.cells])
        halves = np.array([c.half_extents for c in self.cells])
        br = np.array([c.polarity * c.remanence for c in self.cells])
        return centers, halves, br

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cells": [
                {
                    "center_mm": [v * 1e3 for v in c.center],
                    "half_extents_mm": [v * 1e3 for v in c.half_extents],
                    "polarity": c.polarity,
                    "remanence_T": c.remanence,
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MagnetArray":
        try:
            cells = [
                MagnetCell(
                    center=[v * 1e-3 for v in c["center_mm"]],
                    half_extents=[v * 1e-3 for v in c["half_extents_mm"]],
                    polarity=int(c["polarity"]),
                    remanence=float(c["remanence_T"]),
                )
                for c in data["cells"]
            ]
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"malformed array layout: {exc}") from exc
        return cls(cells, data.get("name", "custom"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MagnetArray":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# pole-face force and load capacity


@dataclass(frozen=True)
class GapForceParams:
    H: float = POLE_FACE_H
    A: float = POLE_FACE_AREA
    mu0: float = MU0


def gap_force(p: GapForceParams) -> float:
    """Pole-face traction force ``mu0 * H**2 * A / 2`` in newtons."""
    if not p.mu0 > 0:
        raise InvalidParameterError("mu0 must be positive")
    if not p.A > 0:
        raise InvalidParameterError("area must be positive")
    if p.H < 0 or not math.isfinite(p.H):
        raise InvalidParameterError("magnetising field must be a non-negative finite value")
    return p.mu0 * p.H ** 2 * p.A / 2.0


def load_capacity(force: float, g: float = STANDARD_GRAVITY) -> float:
    if not g > 0:
        raise InvalidParameterError("g must be positive")
    return force / g


def gap_force_discrepancy(p: GapForceParams = GapForceParams(), g: float = STANDARD_GRAVITY) -> dict:
    """Compare the evaluated pole-face force with the published figures.

    The published force (7.24 N) does not follow from the published inputs;
    both are reported side by side and nothing is adjusted.
    """
    computed = gap_force(p)
    return {
        "kind": "gap_force_discrepancy",
        "inputs": {"mu0": p.mu0, "H_A_per_m": p.H, "A_m2": p.A},
        "computed_force_N": computed,
        "reported_force_N": REPORTED_FORCE,
        "ratio_computed_to_reported": computed / REPORTED_FORCE,
        "computed_load_kg": load_capacity(computed, g),
        "reported_force_load_kg": load_capacity(REPORTED_FORCE, g),
        "reported_load_kg": REPORTED_LOAD,
        "load_relative_difference": load_capacity(REPORTED_FORCE, g) / REPORTED_LOAD - 1.0,
        "g_implied_by_reported_load": REPORTED_FORCE / REPORTED_LOAD,
        "g_used": g,
        "note": ("mu0*H^2*A/2 evaluated as written differs from the reported 7.24 N by a factor "
                 "of ~2.99; the reported 0.731 kg load implies g ~ 9.905 m/s^2."),
    }


# ---------------------------------------------------------------------------
# Fields


def _log_sum(u, r):
    """``log(u + r)`` for ``r = sqrt(u**2 + w**2)``, stable when ``u < 0``."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = np.log(u[pos] + r[pos])
    neg = ~pos
    w2 = r[neg] ** 2 - u[neg] ** 2
    out[neg] = np.log(w2) - np.log(r[neg] - u[neg])
    return out


def _rectangle_field(points, center, hx, hy):
    """Field (per unit surface charge, times 4*pi) of a charged rectangle in a z-plane."""
    X0 = points[:, 0] - center[0]
    Y0 = points[:, 1] - center[1]
    Z = points[:, 2] - center[2]
    hx_ = np.zeros(len(points))
    hy_ = np.zeros(len(points))
    hz_ = np.zeros(len(points))
    for sx, dx in ((1.0, hx), (-1.0, -hx)):
        X = X0 + dx
        for sy, dy in ((1.0, hy), (-1.0, -hy)):
            Y = Y0 + dy
            R = np.sqrt(X * X + Y * Y + Z * Z)
            s = sx * sy
            hx_ -= s * _log_sum(Y, R)
            hy_ -= s * _log_sum(X, R)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.arctan((X * Y) / (Z * R))
            hz_ += s * np.nan_to_num(t, nan=0.0)
    return np.stack([hx_, hy_, hz_], axis=1)


def _cell_field(points, center, half, br):
    hx, hy, hz = half
    top = np.array([center[0], center[1], center[2] + hz])
    bottom = np.array([center[0], center[1], center[2] - hz])
    f = _rectangle_field(points, top, hx, hy) - _rectangle_field(points, bottom, hx, hy)
    return f * (br / (4.0 * math.pi))


def field_at(array: MagnetArray, point) -> np.ndarray:
    """Flux density (T) at ``point`` (shape ``(3,)`` or ``(n, 3)``), metres."""
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 3:
        raise InvalidParameterError("points must be 3-vectors")
    centers, halves, br = array._arrays()
    for c, h in zip(centers, halves):
        inside = np.all(np.abs(pts - c) < h, axis=1)
        if inside.any():
            raise DomainError(f"point {pts[inside][0]} lies inside a magnet cell")
    total = np.zeros_like(pts)
    for c, h, b in zip(centers, halves, br):
        total += _cell_field(pts, c, h, b)
    return total[0] if single else total


@dataclass(frozen=True)
class FluxProfile:
    distances: np.ndarray
    flux_magnitude: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        f = np.asarray(self.flux_magnitude, dtype=float)
        if d.shape != f.shape:
            raise InvalidParameterError("distances and flux_magnitude differ in length")
        if np.any(np.diff(d) <= 0):
            raise InvalidParameterError("distances must be strictly increasing")
        if np.any(f < 0):
            raise InvalidParameterError("flux magnitudes must be non-negative")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "flux_magnitude", f)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["distance_m", "flux_T"])
            for d, f in zip(self.distances, self.flux_magnitude):
                w.writerow([repr(float(d)), repr(float(f))])
        return path

    @classmethod
    def from_csv(cls, path) -> "FluxProfile":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def array_center(array: MagnetArray) -> np.ndarray:
    """Lateral centroid of the cells, on the array's mid-plane."""
    centers = np.array([c.center for c in array.cells])
    return centers.mean(axis=0)


def flux_profile(array: MagnetArray, axis_start: float, axis_end: float,
                 n_samples: int) -> FluxProfile:
    """|B| sampled along the central normal axis, distances from the array centre."""
    if not 0 < axis_start < axis_end:
        raise InvalidParameterError("need 0 < axis_start < axis_end")
    if n_samples < 2:
        raise InvalidParameterError("n_samples must be at least 2")
    d = np.linspace(axis_start, axis_end, int(n_samples))
    c = array_center(array)
    pts = np.column_stack([np.full_like(d, c[0]), np.full_like(d, c[1]), c[2] + d])
    b = field_at(array, pts)
    return FluxProfile(d, np.linalg.norm(b, axis=1))


# ---------------------------------------------------------------------------
# Preset layouts on a 3x3 grid; keys are (column, row) indices in {-1, 0, 1}.

_LAYOUTS = {
    "H": {(-1, -1): 1, (-1, 0): 1, (-1, 1): 1, (0, 0): 1, (1, -1): 1, (1, 0): 1, (1, 1): 1},
    "X": {(-1, -1): 1, (-1, 1): 1, (0, 0): 1, (1, -1): 1, (1, 1): 1},
    # H with the middle cell of each outer column reversed
    "H-reversed": {(-1, -1): 1, (-1, 0): -1, (-1, 1): 1, (0, 0): 1, (1, -1): 1, (1, 0): -1, (1, 1): 1},
}
PRESETS = tuple(_LAYOUTS)


def preset_array(name: str, cell_size: Sequence[float] = DEFAULT_CELL_SIZE,
                 pitch: float = DEFAULT_PITCH, remanence: float = DEFAULT_REMANENCE) -> MagnetArray:
    try:
        layout = _LAYOUTS[name]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    half = tuple(0.5 * float(s) for s in cell_size)
    cells = [
        MagnetCell((col * pitch, row * pitch, 0.0), half, pol, remanence)
        for (col, row), pol in sorted(layout.items())
    ]
    return MagnetArray(cells, name)


# ---------------------------------------------------------------------------
# Array-to-array coupling (point-dipole reduction)


def dipole_force(m1, m2, r) -> np.ndarray:
    """Force on dipole ``m2`` from ``m1``; ``r`` points from 1 to 2. Broadcasts."""
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    r = np.asarray(r, dtype=float)
    rn2 = np.sum(r * r, axis=-1, keepdims=True)
    rn = np.sqrt(rn2)
    m1r = np.sum(m1 * r, axis=-1, keepdims=True)
    m2r = np.sum(m2 * r, axis=-1, keepdims=True)
    m12 = np.sum(m1 * m2, axis=-1, keepdims=True)
    k = 3.0 * MU0 / (4.0 * math.pi * rn ** 5)
    return k * (m1r * m2 + m2r * m1 + m12 * r - 5.0 * m1r * m2r * r / rn2)


def _facing_dipoles(a: MagnetArray, b: MagnetArray, gap):
    """Dipole positions/moments with ``b`` turned to face ``a`` across ``gap``.

    ``b`` is rotated 180 degrees about the y axis, so a ``b`` cell's polarity
    names the pole it presents to ``a``. Returns arrays with a leading gap axis.
    """
    gap = np.atleast_1d(np.asarray(gap, dtype=float))
    pa = np.array([c.center for c in a.cells])
    ma = np.zeros_like(pa)
    ma[:, 2] = [c.dipole_moment for c in a.cells]
    pb_local = np.array([c.center for c in b.cells])
    offset = a.front_plane + b.front_plane + gap  # (ng,)
    pb = np.empty((len(gap),) + pb_local.shape)
    pb[..., 0] = -pb_local[:, 0]
    pb[..., 1] = pb_local[:, 1]
    pb[..., 2] = offset[:, None] - pb_local[:, 2]
    mb = np.zeros_like(pb_local)
    mb[:, 2] = [-c.dipole_moment for c in b.cells]
    return pa, ma, pb, mb


def coupling_forces(a: MagnetArray, b: MagnetArray, gap):
    """Net forces ``(on_a, on_b)`` for arrays facing across a face-to-face ``gap``.

    ``a`` sits at the origin with its normal along +z; results are expressed in
    that frame. Accepts a scalar gap or an array of gaps.
    """
    g = np.asarray(gap, dtype=float)
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise InvalidParameterError("gap must be positive")
    pa, ma, pb, mb = _facing_dipoles(a, b, g)
    # r[k, i, j] points from a-cell i to b-cell j at gap k
    r = pb[:, None, :, :] - pa[None, :, None, :]
    f_on_b = dipole_force(ma[None, :, None, :], mb[None, None, :, :], r).sum(axis=(1, 2))
    f_on_a = dipole_force(mb[None, None, :, :], ma[None, :, None, :], -r).sum(axis=(1, 2))
    if g.ndim == 0:
        return f_on_a[0], f_on_b[0]
    return f_on_a, f_on_b


def coupling_force(a: MagnetArray, b: MagnetArray, gap) -> np.ndarray:
    """Force on ``b`` exerted by ``a``; negative z component means attraction."""
    return coupling_forces(a, b, gap)[1]


def decoupling_gap(a: MagnetArray, b: MagnetArray, hold_force: float,
                   min_gap: float = 1e-4, max_gap: float = 0.1, tol: float = 1e-5) -> float:
    """Smallest gap at which the normal attraction drops below ``hold_force``.

    Bisection to ``tol``; assumes attraction decays monotonically over
    ``[min_gap, max_gap]``. Returns ``max_gap`` when the force is still above
    ``hold_force`` there.
    """
    if not hold_force > 0:
        raise InvalidParameterError("hold_force must be positive")

    def attraction(g):
        return -coupling_force(a, b, g)[2]

    f_min = attraction(min_gap)
    if f_min <= 0:
        raise InvalidParameterError("arrays are not attractive at the minimum gap")
    if f_min < hold_force:
        raise AlwaysDecoupledError(
            f"attraction at {min_gap:g} m is {f_min:.4g} N, below hold force {hold_force:.4g} N")
    if attraction(max_gap) >= hold_force:
        return max_gap
    lo, hi = min_gap, max_gap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if attraction(mid) < hold_force:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class MagnetLink:
    """Tabulated attraction between two coupled modules as a function of shell gap.

    ``standoff`` is the extra face-to-face distance between the two arrays when
    the shells touch (shell walls and mounting).
    """

    gaps: np.ndarray
    forces: np.ndarray
    standoff: float = 0.0
    source: str = "table"

    def force(self, gap):
        g = np.asarray(gap, dtype=float)
        return np.interp(np.maximum(g, 0.0), self.gaps, self.forces, right=0.0)

    def scaled(self, factor: float) -> "MagnetLink":
        return MagnetLink(self.gaps, self.forces * factor, self.standoff, f"{self.source}*{factor:g}")

    @classmethod
    def zero(cls) -> "MagnetLink":
        return cls(np.array([0.0, 1.0]), np.zeros(2), 0.0, "zero")

    @classmethod
    def from_arrays(cls, a: MagnetArray, b: MagnetArray, standoff: float,
                    max_gap: float = 0.4, n: int = 4001) -> "MagnetLink":
        if not standoff > 0:
            raise InvalidParameterError("standoff must be positive")
        gaps = np.linspace(0.0, max_gap, n)
        attraction = -coupling_force(a, b, gaps + standoff)[:, 2]
        return cls(gaps, attraction, standoff, f"{a.name}|{b.name}")

    @classmethod
    def calibrated(cls, a: MagnetArray, b: MagnetArray,
                   contact_force: float = REPORTED_FORCE, **kw) -> "MagnetLink":
        """Choose the standoff so the attraction at shell contact equals ``contact_force``."""
        standoff = decoupling_gap(a, b, contact_force, tol=1e-9)
        return cls.from_arrays(a, b, standoff, **kw)


def default_link(preset: str = "H-reversed", contact_force: float = REPORTED_FORCE,
                 **preset_kw) -> MagnetLink:
    a = preset_array(preset, **preset_kw)
    return MagnetLink.calibrated(a, a.negated(), contact_force)
