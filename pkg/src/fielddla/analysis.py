"""Analytical bridging-time model, fractal-dimension estimators and read-out of bridging times."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ModelParams

AREA_WINDOWS = 6  # log-spaced window sizes for the area-law estimator
AREA_WINDOW_SPAN = 4.0  # largest / smallest window side
RASTER_PER_RADIUS = 4  # raster cell = R / 4
MIN_BOX_SIZES = 5


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class BridgingModelResult:
    tau_b_closed: float
    tau_series: list[float]
    tau_b_sum: float
    wave_count: int
    u_eff: float
    clamped: bool = False


@dataclass
class FractalEstimate:
    gamma: float
    method: str  # "area_law" or "box_count"
    fit_points: list[tuple[float, float]] = field(default_factory=list)


def effective_velocity(params: ModelParams) -> float:
    """Drift speed |F_d(r0, theta=0)| / (6 pi eta R) = 4 eps beta^2 E^2 R^5 / (eta r0^4)."""
    p = params
    return (4.0 * p.medium_permittivity * p.cm_factor**2 * p.field**2 * p.particle_radius**5
            / (p.dynamic_viscosity * p.mean_spacing**4))


def wave_count(params: ModelParams) -> int:
    """Smallest J with (c**(J/gamma) - 1) R / (c - 1) >= d/2 (0 when d <= 2R)."""
    p = params
    c, g, R, half = p.accretion_count, p.growth_dimension, p.particle_radius, p.gap_length / 2
    if p.gap_length <= 2 * R:
        return 0
    # closed-form estimate, then walk to the exact integer
    J = max(1, int(math.floor(g * math.log(half * (c - 1) / R + 1, c))))
    while J > 1 and (c ** ((J - 1) / g) - 1) * R / (c - 1) >= half:
        J -= 1
    while (c ** (J / g) - 1) * R / (c - 1) < half:
        J += 1
    return J


def bridging_time_closed_form(params: ModelParams, prefactor: str = "printed") -> float:
    """Closed-form bridging time.

    ``prefactor="printed"`` evaluates
    (d/2R)^g (c-1)^(g-1) (r0/R)^5 eta / (2 eps E^2) with no beta dependence;
    ``"consistent"`` uses (d/2R)^g (c-1)^(g-1) r0 / u_eff instead, which is
    half as large for beta = 1.
    """
    p = params
    g = p.growth_dimension
    geom = (p.gap_length / (2 * p.particle_radius)) ** g * (p.accretion_count - 1) ** (g - 1)
    if prefactor == "printed":
        return (geom * (p.mean_spacing / p.particle_radius) ** 5 / p.field**2
                * p.dynamic_viscosity / (2 * p.medium_permittivity))
    if prefactor == "consistent":
        return geom * p.mean_spacing / effective_velocity(p)
    raise ValueError(f"unknown prefactor variant {prefactor!r}")


def bridging_time_series(params: ModelParams) -> BridgingModelResult:
    """Sum of the accretion-wave transit times tau_j up to the wave that closes the gap."""
    p = params
    u = effective_velocity(p)
    J = wave_count(p)
    c, g = p.accretion_count, p.growth_dimension
    taus = []
    clamped = False
    for j in range(1, J + 1):
        tau = (c ** (j - 1) * p.mean_spacing - c ** ((j - 1) / g) * p.particle_radius) / u
        if tau <= 0:
            tau = 0.0
            clamped = True
        taus.append(tau)
    return BridgingModelResult(bridging_time_closed_form(p), taus, math.fsum(taus), J, u, clamped)


def model_curve(params: ModelParams, fields: Sequence[float], series: bool = False) -> list[tuple[float, float]]:
    """(E, tau_b) pairs over a list of field strengths."""
    out = []
    for xi in fields:
        p = params.with_(field=float(xi))
        tau = bridging_time_series(p).tau_b_sum if series else bridging_time_closed_form(p)
        out.append((float(xi), tau))
    return out


def spacing_curve(params: ModelParams, spacings: Sequence[float], series: bool = False) -> list[tuple[float, float]]:
    """(r0, tau_b) pairs, the concentration dependence at fixed field."""
    out = []
    for r0 in spacings:
        p = params.with_(mean_spacing=float(r0))
        tau = bridging_time_series(p).tau_b_sum if series else bridging_time_closed_form(p)
        out.append((float(r0), tau))
    return out


# --------------------------------------------------------------------------
# fractal dimension

def rasterize(positions: np.ndarray, R: float, origin, shape, cell: float) -> np.ndarray:
    """Boolean raster; a cell is covered when its centre lies inside some disk."""
    img = np.zeros(shape, dtype=bool)
    ny, nx = shape
    k = int(math.ceil(R / cell)) + 1
    offs = np.arange(-k, k + 1)
    for x, y in positions:
        ix = int(math.floor((x - origin[0]) / cell))
        iy = int(math.floor((y - origin[1]) / cell))
        cols = ix + offs
        rows = iy + offs
        cols = cols[(cols >= 0) & (cols < nx)]
        rows = rows[(rows >= 0) & (rows < ny)]
        if len(cols) == 0 or len(rows) == 0:
            continue
        cx = origin[0] + (cols + 0.5) * cell - x
        cy = origin[1] + (rows + 0.5) * cell - y
        inside = cx[None, :] ** 2 + cy[:, None] ** 2 <= R * R
        img[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] |= inside
    return img


def _center_particle(pos: np.ndarray) -> np.ndarray:
    c = pos.mean(axis=0)
    return pos[np.argmin(np.hypot(*(pos - c).T))]


def fractal_dimension_area(positions, R: float, window: Optional[float] = None,
                           center=None) -> FractalEstimate:
    """Area-law dimension: gamma = ln A / ln L, lengths in particle diameters.

    Windows are squares centred on ``center`` (default: the particle nearest
    the centroid).  The largest side is ``window`` (default: twice the largest
    axis-aligned distance of a particle centre from the centre); six
    log-spaced sides down to a quarter of that are averaged.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(pos) < 2:
        raise DegenerateGeometryError("need at least 2 particles")
    c = _center_particle(pos) if center is None else np.asarray(center, dtype=float)
    if window is None:
        window = 2.0 * float(np.max(np.abs(pos - c)))
    diam = 2.0 * R
    sides = np.geomspace(window / AREA_WINDOW_SPAN, window, AREA_WINDOWS)
    if sides[0] / diam <= 1.0:
        raise DegenerateGeometryError("smallest window is not larger than one particle diameter")
    cell = R / RASTER_PER_RADIUS
    n = int(math.ceil(window / cell))
    origin = c - 0.5 * n * cell
    img = rasterize(pos, R, origin, (n, n), cell)
    pts = []
    gammas = []
    for L in sides:
        m = int(round(L / cell))
        lo = (n - m) // 2
        covered = img[lo:lo + m, lo:lo + m].sum() * cell * cell
        A = covered / diam**2
        Lu = m * cell / diam
        if A <= 0:
            continue
        pts.append((Lu, A))
        gammas.append(math.log(A) / math.log(Lu))
    if not gammas:
        raise DegenerateGeometryError("no particle inside any window")
    return FractalEstimate(float(np.mean(gammas)), "area_law", pts)


def fractal_dimension_boxcount(positions, R: float, offsets: int = 4) -> FractalEstimate:
    """Box-counting dimension of the disk union.

    Box sides halve from a quarter of the aggregate extent down to no less
    than one particle diameter, so the coarsest boxes tile the bounding
    square exactly.  Each count is the minimum over ``offsets**2`` grid
    shifts.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(pos) < 2:
        raise DegenerateGeometryError("need at least 2 particles")
    lo = pos.min(axis=0) - R
    hi = pos.max(axis=0) + R
    extent = float(np.max(hi - lo))
    top = extent / 4
    levels = int(math.floor(math.log2(top / (2.0 * R)) + 1e-9)) + 1 if top >= 2.0 * R else 0
    if levels < MIN_BOX_SIZES:
        raise DegenerateGeometryError(
            f"aggregate extent {extent:.3g} m supports only {max(levels, 0)} box sizes (need {MIN_BOX_SIZES})")
    # raster cell: a power-of-two fraction of the smallest box, no coarser than R/4
    smallest = top / 2 ** (levels - 1)
    cell = smallest / 2 ** int(math.ceil(math.log2(smallest / (R / RASTER_PER_RADIUS))))
    per_top = int(round(top / cell))
    n = 6 * per_top  # the bounding square plus one coarsest box of padding on each side
    origin = lo - top
    img = rasterize(pos, R, origin, (n, n), cell)
    ys, xs = np.nonzero(img)
    pts = []
    for k in range(levels - 1, -1, -1):
        b = per_top >> k
        best = None
        for ox in range(offsets):
            for oy in range(offsets):
                sx = (ox * b) // offsets
                sy = (oy * b) // offsets
                keys = ((ys + sy) // b) * (n // b + 2) + (xs + sx) // b
                count = len(np.unique(keys))
                best = count if best is None else min(best, count)
        pts.append((b * cell, float(best)))
    x = np.log([1.0 / s for s, _ in pts])
    y = np.log([c for _, c in pts])
    slope = float(np.polyfit(x, y, 1)[0])
    return FractalEstimate(slope, "box_count", pts)


# --------------------------------------------------------------------------

def extract_bridging_times(series, plateau_tol: float = 0.02):
    """(t_min, t_max) from a time-sorted conductance series.

    t_min is the first time with G > 0; t_max the first time G reaches
    (1 - plateau_tol) of its maximum.  Both are None when G is identically 0.
    """
    ts = [float(t) for t, _ in series]
    gs = [float(g) for _, g in series]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("series must be sorted by time")
    gmax = max(gs, default=0.0)
    if gmax <= 0:
        return None, None
    t_min = next(t for t, g in zip(ts, gs) if g > 0)
    t_max = next(t for t, g in zip(ts, gs) if g >= (1 - plateau_tol) * gmax)
    return t_min, t_max
