from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from ..core import SimulationConfig
from ._kernels import find, labels_of

OVERLAP_SLACK = 1e-3  # allowed relative overlap after projection
MAX_ELECTRODES = 62  # electrode sets are tracked as int64 bitmasks


class PlacementError(RuntimeError):
    pass


@dataclass
class ParticleState:
    """Evolving dispersion.

    ``parent`` is a union-find forest over the particles followed by one node
    per electrode; the root of every set is its smallest member, so a cluster
    is labelled by its founder particle.  ``mask[root]`` holds the bitmask of
    electrodes the set touches.
    """

    positions: np.ndarray
    radius: float
    parent: np.ndarray
    mask: np.ndarray
    n_electrodes: int
    rng: np.random.Generator
    time: float = 0.0
    step_count: int = 0
    attached_pos: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    attached_mom: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    attached_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @classmethod
    def from_positions(cls, positions, radius: float, n_electrodes: int, seed: int = 0) -> "ParticleState":
        pos = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 2).copy()
        n = len(pos)
        if n_electrodes > MAX_ELECTRODES:
            raise ValueError(f"at most {MAX_ELECTRODES} electrodes are supported")
        parent = np.arange(n + n_electrodes, dtype=np.int64)
        mask = np.zeros(n + n_electrodes, dtype=np.int64)
        for e in range(n_electrodes):
            mask[n + e] = np.int64(1) << e
        return cls(pos, float(radius), parent, mask, n_electrodes, np.random.default_rng(seed))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def cluster_id(self) -> np.ndarray:
        return labels_of(self.parent, self.n)

    @property
    def attached_to(self) -> np.ndarray:
        """Lowest electrode index each particle's cluster touches, or -1."""
        lab = self.cluster_id
        return _lowest_bit(self.mask[lab]) if self.n else np.empty(0, dtype=np.int64)

    @property
    def free(self) -> np.ndarray:
        return self.mask[self.cluster_id] == 0

    def electrode_root(self, e: int) -> int:
        return find(self.parent, self.n + e)

    def copy(self) -> "ParticleState":
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return ParticleState(self.positions.copy(), self.radius, self.parent.copy(), self.mask.copy(),
                             self.n_electrodes, rng, self.time, self.step_count,
                             self.attached_pos.copy(), self.attached_mom.copy(), self.attached_ids.copy())


def _lowest_bit(masks: np.ndarray) -> np.ndarray:
    out = np.full(masks.shape, -1, dtype=np.int64)
    nz = masks != 0
    low = masks[nz] & -masks[nz]
    out[nz] = np.log2(low.astype(np.float64)).round().astype(np.int64)
    return out


@nb.njit(cache=True)
def _rsa(cand, placed, count, target, dmin2, cell, ncx, ncy, grid, gcount):
    for k in range(cand.shape[0]):
        if count == target:
            return count, k
        x = cand[k, 0]
        y = cand[k, 1]
        cx = min(int(x / cell), ncx - 1)
        cy = min(int(y / cell), ncy - 1)
        ok = True
        for oy in range(max(cy - 1, 0), min(cy + 2, ncy)):
            for ox in range(max(cx - 1, 0), min(cx + 2, ncx)):
                c = oy * ncx + ox
                for q in range(gcount[c]):
                    j = grid[c, q]
                    dx = placed[j, 0] - x
                    dy = placed[j, 1] - y
                    if dx * dx + dy * dy < dmin2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            c = cy * ncx + cx
            grid[c, gcount[c]] = count
            gcount[c] += 1
            placed[count, 0] = x
            placed[count, 1] = y
            count += 1
    return count, cand.shape[0]


def init_state(config: SimulationConfig, seed: Optional[int] = None) -> ParticleState:
    """Seeded uniform random sequential placement with minimum spacing 2R(1+delta)."""
    seed = config.seed if seed is None else seed
    g = config.geometry
    R = config.dispersion.particle_radius
    n = config.dispersion.resolved_count(g.area)
    W, H = g.domain
    rng = np.random.default_rng(seed)
    placed = np.zeros((n, 2))
    if n:
        dmin = 2 * R * (1 + config.sticking_tolerance)
        cell = dmin
        ncx = max(1, int(W / cell))
        ncy = max(1, int(H / cell))
        cell = max(W / ncx, H / ncy)
        grid = np.zeros((ncx * ncy, 16), dtype=np.int64)
        gcount = np.zeros(ncx * ncy, dtype=np.int64)
        if W <= 2 * R or H <= 2 * R:
            raise PlacementError("domain is narrower than one particle")
        budget = 1000 * n
        count = 0
        used = 0
        chunk = max(1024, 4 * n)
        while count < n and used < budget:
            m = min(chunk, budget - used)
            cand = np.column_stack([rng.uniform(R, W - R, m), rng.uniform(R, H - R, m)])
            count, k = _rsa(cand, placed, count, n, dmin * dmin, cell, ncx, ncy, grid, gcount)
            used += k
        if count < n:
            raise PlacementError(f"placed only {count} of {n} particles after {budget} attempts")
    state = ParticleState.from_positions(placed, R, len(g.electrodes), seed)
    # the dynamics draw from their own stream so placement changes do not shift the noise
    state.rng = np.random.default_rng([seed, 1])
    return state


def min_pair_distance(pos: np.ndarray) -> float:
    if len(pos) < 2:
        return math.inf
    from scipy.spatial import cKDTree

    d, _ = cKDTree(pos).query(pos, k=2)
    return float(d[:, 1].min())
