"""Contact graph, bridge detection and the resistor-network read-out."""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, spsolve
from scipy.spatial import cKDTree

from ..core import GapGeometry
from .state import ParticleState

SOLVER_RTOL = 1e-10


class ContactGraph:
    """Undirected contacts between particles (nodes 0..n-1) and electrodes (nodes n..n+E-1).

    A particle pair is an edge when centres are within 2R(1+delta); a particle
    touches an electrode when its centre is within R(1+delta) of the segment.
    """

    def __init__(self, n_particles: int, n_electrodes: int, edges: np.ndarray, conductance: float):
        self.n_particles = n_particles
        self.n_electrodes = n_electrodes
        self.edges = edges.reshape(-1, 2)
        self.edge_conductance = conductance

    @classmethod
    def build(cls, positions, R: float, geometry: GapGeometry, tolerance: float,
              contact_resistance: float = 1.0) -> "ContactGraph":
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        n = len(pos)
        pairs = [np.empty((0, 2), dtype=np.int64)]
        if n >= 2:
            pp = cKDTree(pos).query_pairs(2 * R * (1 + tolerance), output_type="ndarray")
            pairs.append(pp.astype(np.int64))
        reach = R * (1 + tolerance)
        for e, seg in enumerate(geometry.electrodes):
            cx = np.clip(pos[:, 0], seg.x0, seg.x1)
            cy = np.clip(pos[:, 1], seg.y0, seg.y1)
            near = np.nonzero(np.hypot(pos[:, 0] - cx, pos[:, 1] - cy) <= reach)[0]
            pairs.append(np.column_stack([near, np.full(len(near), n + e)]).astype(np.int64))
        edges = np.concatenate(pairs)
        return cls(n, len(geometry.electrodes), edges, 1.0 / contact_resistance)

    @property
    def n_nodes(self) -> int:
        return self.n_particles + self.n_electrodes

    def laplacian(self) -> sp.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        g = np.full(len(i), self.edge_conductance)
        adj = sp.coo_matrix((np.concatenate([g, g]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                            shape=(self.n_nodes, self.n_nodes)).tocsr()
        return (sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsr()

    def components(self) -> np.ndarray:
        from scipy.sparse.csgraph import connected_components

        i, j = self.edges[:, 0], self.edges[:, 1]
        adj = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(self.n_nodes, self.n_nodes))
        return connected_components(adj, directed=False)[1]

    def effective_conductance(self, a: int, b: int) -> float:
        """Conductance between electrodes ``a`` and ``b`` (electrode indices)."""
        na, nb_ = self.n_particles + a, self.n_particles + b
        comp = self.components()
        if comp[na] != comp[nb_]:
            return 0.0
        nodes = np.nonzero(comp == comp[na])[0]
        L = self.laplacian()[nodes][:, nodes].tocsr()
        ia = int(np.searchsorted(nodes, na))
        ib = int(np.searchsorted(nodes, nb_))
        interior = np.setdiff1d(np.arange(len(nodes)), [ia, ib])
        if len(interior) == 0:
            return float(-L[ia, ib])
        L_ii = L[interior][:, interior].tocsr()
        rhs = -np.asarray(L[interior][:, [ia]].todense()).ravel()  # potential 1 at a, 0 at b
        diag = L_ii.diagonal()
        precond = sp.diags(1.0 / diag)
        v, info = cg(L_ii, rhs, rtol=1e-13, atol=0.0, maxiter=10 * len(interior) + 100, M=precond)
        res = np.linalg.norm(L_ii @ v - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if info != 0 or res > SOLVER_RTOL:
            v = spsolve(L_ii.tocsc(), rhs)
        full = np.zeros(len(nodes))
        full[ia] = 1.0
        full[interior] = v
        return float(L[ia].dot(full)[0])


def bridging_status(state: ParticleState) -> Optional[tuple[int, int]]:
    """First electrode pair (lexicographic) joined through contacts, or None."""
    roots = [state.electrode_root(e) for e in range(state.n_electrodes)]
    for a in range(state.n_electrodes):
        for b in range(a + 1, state.n_electrodes):
            if roots[a] == roots[b]:
                return a, b
    return None


def conductance(state: ParticleState, geometry: GapGeometry, contact_resistance: float,
                tolerance: float, pair: Optional[tuple[int, int]] = None) -> float:
    """Effective conductance between the reference electrodes (0 when unbridged)."""
    a, b = geometry.reference if pair is None else pair
    if state.electrode_root(a) != state.electrode_root(b):
        return 0.0
    graph = ContactGraph.build(state.positions, state.radius, geometry, tolerance, contact_resistance)
    return graph.effective_conductance(a, b)
