"""Electric field in the gap.

The baseline is a superposition of parallel-plate fields, one per electrode
pair, each confined to the band between the two segments and rolled off with a
cosine edge outside it.  Particles attached to an electrode add the field of an
induced point dipole, which sharpens the field at cluster tips.  The gradient
of |E|^2 is taken by central differences.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Optional, Sequence

import numba as nb
import numpy as np

from .core import GapGeometry

DEFAULT_ROLLOFF = 1e-6  # m; the simulator passes the particle radius


class FieldSample(NamedTuple):
    e: tuple[float, float]
    magnitude_sq: float


class OutsideDomainError(ValueError):
    pass


class InsideParticleError(ValueError):
    pass


def plate_bands(geometry: GapGeometry) -> np.ndarray:
    """Table of plate-field bands, one row per electrode pair with a potential difference.

    Columns: axis (0 = gap along x, 1 = gap along y), gap interval lo/hi along
    that axis, transverse interval lo/hi, field components ex, ey.
    """
    rows = []
    els = geometry.electrodes
    for i in range(len(els)):
        for j in range(i + 1, len(els)):
            p, q = els[i], els[j]
            dv = p.potential - q.potential
            if dv == 0:
                continue
            sep = (max(0.0, max(p.x0, q.x0) - min(p.x1, q.x1)),
                   max(0.0, max(p.y0, q.y0) - min(p.y1, q.y1)))
            axis = 1 if sep[1] >= sep[0] else 0
            g = sep[axis]
            pa = (p.x0, p.x1) if axis == 0 else (p.y0, p.y1)
            qa = (q.x0, q.x1) if axis == 0 else (q.y0, q.y1)
            pt = (p.y0, p.y1) if axis == 0 else (p.x0, p.x1)
            qt = (q.y0, q.y1) if axis == 0 else (q.x0, q.x1)
            if pa[1] <= qa[0]:
                a_lo, a_hi, sign = pa[1], qa[0], 1.0
            else:
                a_lo, a_hi, sign = qa[1], pa[0], -1.0
            t_lo, t_hi = max(pt[0], qt[0]), min(pt[1], qt[1])
            if t_hi < t_lo:
                # no transverse overlap: a zero-width band on the midline
                t_lo = t_hi = 0.5 * (t_lo + t_hi)
            mag = sign * dv / g
            ex, ey = (mag, 0.0) if axis == 0 else (0.0, mag)
            rows.append((axis, a_lo, a_hi, t_lo, t_hi, ex, ey))
    return np.array(rows, dtype=np.float64).reshape(-1, 7)


@nb.njit(cache=True, nogil=True)
def _rolloff(c, lo, hi, w):
    if c < lo:
        d = lo - c
    elif c > hi:
        d = c - hi
    else:
        return 1.0
    if d >= w:
        return 0.0
    return 0.5 * (1.0 + math.cos(math.pi * d / w))


@nb.njit(cache=True, nogil=True)
def baseline_at(bands, w, x, y):
    ex = 0.0
    ey = 0.0
    for k in range(bands.shape[0]):
        if bands[k, 0] == 0.0:
            a, t = x, y
        else:
            a, t = y, x
        f = _rolloff(a, bands[k, 1], bands[k, 2], w)
        if f == 0.0:
            continue
        f *= _rolloff(t, bands[k, 3], bands[k, 4], w)
        if f == 0.0:
            continue
        ex += f * bands[k, 5]
        ey += f * bands[k, 6]
    return ex, ey


@nb.njit(cache=True, nogil=True)
def _flat_1d(c, r, lo, hi, w):
    """-1 when the rolloff is 0 on [c-r, c+r], 1 when it is 1 there, 0 otherwise."""
    if c + r <= lo - w or c - r >= hi + w:
        return -1
    if lo <= c - r and c + r <= hi:
        return 1
    return 0


@nb.njit(cache=True, nogil=True)
def baseline_flat(bands, w, x, y, r):
    """True when :func:`baseline_at` returns the same value everywhere in the
    square of half-side ``r`` around (x, y)."""
    for k in range(bands.shape[0]):
        if bands[k, 0] == 0.0:
            a, t = x, y
        else:
            a, t = y, x
        fa = _flat_1d(a, r, bands[k, 1], bands[k, 2], w)
        if fa == -1:
            continue
        ft = _flat_1d(t, r, bands[k, 3], bands[k, 4], w)
        if ft == -1:
            continue
        if fa == 0 or ft == 0:
            return False
    return True


@nb.njit(cache=True, nogil=True)
def dipole_sum(px, py, cx, cy, mx, my, x, y, skip, r_cut2):
    """Field at (x, y) of point dipoles with moment/(4 pi eps) ``(mx, my)`` at (cx, cy)."""
    ex = 0.0
    ey = 0.0
    for k in range(cx.shape[0]):
        if k == skip:
            continue
        dx = x - cx[k]
        dy = y - cy[k]
        s2 = dx * dx + dy * dy
        if s2 >= r_cut2:
            continue
        s = math.sqrt(s2)
        inv3 = 1.0 / (s2 * s)
        ux = dx / s
        uy = dy / s
        mr = mx[k] * ux + my[k] * uy
        ex += (3.0 * mr * ux - mx[k]) * inv3
        ey += (3.0 * mr * uy - my[k]) * inv3
    return px + ex, py + ey


class FieldModel:
    """Baseline plate field plus induced dipoles of attached particles.

    ``R`` and ``re_beta`` size the induced moments (``beta R^3 E``); the
    rolloff width defaults to one particle radius.
    """

    def __init__(self, geometry: GapGeometry, R: float, re_beta: float, rolloff: Optional[float] = None):
        self.geometry = geometry
        self.R = R
        self.re_beta = re_beta
        self.rolloff = R if rolloff is None else rolloff
        self.bands = plate_bands(geometry)

    def _check_inside(self, x, y):
        w, h = self.geometry.domain
        tol = 1e-12 * max(w, h)
        if not (-tol <= x <= w + tol and -tol <= y <= h + tol):
            raise OutsideDomainError(f"point ({x!r}, {y!r}) lies outside the domain")

    def baseline(self, point) -> FieldSample:
        x, y = float(point[0]), float(point[1])
        self._check_inside(x, y)
        ex, ey = baseline_at(self.bands, self.rolloff, x, y)
        return FieldSample((ex, ey), ex * ex + ey * ey)

    def moments(self, centers) -> np.ndarray:
        """Scaled induced moments beta R^3 E_baseline at each center, shape (M, 2)."""
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        out = np.empty_like(centers)
        k = self.re_beta * self.R**3
        for i, (x, y) in enumerate(centers):
            ex, ey = baseline_at(self.bands, self.rolloff, x, y)
            out[i] = k * ex, k * ey
        return out

    def perturbed(self, attached, point) -> FieldSample:
        x, y = float(point[0]), float(point[1])
        self._check_inside(x, y)
        centers = _centers(attached)
        if len(centers):
            d2 = (centers[:, 0] - x) ** 2 + (centers[:, 1] - y) ** 2
            if np.any(d2 <= self.R**2):
                raise InsideParticleError("field requested inside an attached particle")
        m = self.moments(centers)
        px, py = baseline_at(self.bands, self.rolloff, x, y)
        ex, ey = dipole_sum(px, py, centers[:, 0].copy(), centers[:, 1].copy(),
                            m[:, 0].copy(), m[:, 1].copy(), x, y, -1, np.inf)
        return FieldSample((ex, ey), ex * ex + ey * ey)


def _centers(attached) -> np.ndarray:
    """Accept an (M, 2) array or an iterable of (x, y) / ((x, y), potential) items."""
    if isinstance(attached, np.ndarray):
        return attached.reshape(-1, 2).astype(float)
    pts = []
    for item in attached:
        if len(item) == 2 and np.ndim(item[0]) == 1:
            item = item[0]
        pts.append((float(item[0]), float(item[1])))
    return np.array(pts, dtype=float).reshape(-1, 2)


def baseline_field(geometry: GapGeometry, point, rolloff: float = DEFAULT_ROLLOFF) -> FieldSample:
    return FieldModel(geometry, rolloff, 0.0, rolloff).baseline(point)


def perturbed_field(geometry: GapGeometry, attached, point, R: float, re_beta: float = 1.0,
                    rolloff: Optional[float] = None) -> FieldSample:
    return FieldModel(geometry, R, re_beta, rolloff).perturbed(attached, point)


def grad_field_sq(field_fn: Callable, point, h: float, domain: Optional[Sequence[float]] = None):
    """Central-difference gradient of |E|^2; ``field_fn(point)`` returns a FieldSample or vector."""
    if h <= 0:
        raise ValueError("h must be > 0")
    x, y = float(point[0]), float(point[1])
    if domain is not None:
        w, hh = domain
        if x - h < 0 or x + h > w or y - h < 0 or y + h > hh:
            raise OutsideDomainError("gradient stencil leaves the domain")

    def sq(px, py):
        f = field_fn((px, py))
        if isinstance(f, FieldSample):
            return f.magnitude_sq
        return float(f[0]) ** 2 + float(f[1]) ** 2

    gx = (sq(x + h, y) - sq(x - h, y)) / (2 * h)
    gy = (sq(x, y + h) - sq(x, y - h)) / (2 * h)
    return gx, gy

