from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import physics
from ..analysis import extract_bridging_times
from ..core import SimulationConfig
from ..field import FieldModel
from . import _kernels as K
from .graph import bridging_status, conductance
from .state import ParticleState, init_state

log = logging.getLogger(__name__)

EVENT_KINDS = ("stick", "attach", "bridge")
PROJECTION_SWEEPS = 5
PLATEAU_TOL = 0.02


class NumericalBlowupError(RuntimeError):
    pass


@dataclass
class Event:
    t: float
    kind: str
    a: int
    b: int


@dataclass
class Snapshot:
    t: float
    positions: np.ndarray
    cluster: np.ndarray
    electrode: np.ndarray


@dataclass
class RunResult:
    t_min: Optional[float]
    t_max: Optional[float]
    conductance_series: list[tuple[float, float]]
    events: list[Event]
    final_state: ParticleState
    snapshots: list[Snapshot] = field(default_factory=list)
    first_bridge: Optional[tuple[int, int]] = None

    @property
    def bridged(self) -> bool:
        return self.t_min is not None

    @property
    def g_max(self) -> float:
        return max((g for _, g in self.conductance_series), default=0.0)


class _Grid:
    def __init__(self, domain, cell):
        W, H = domain
        self.ncx = max(1, int(W / cell))
        self.ncy = max(1, int(H / cell))
        # cells at least `cell` wide so the 3x3 stencil covers the reach
        self.cell = max(W / self.ncx, H / self.ncy)
        self.ncx = max(1, min(self.ncx, int(math.ceil(W / self.cell))))
        self.ncy = max(1, min(self.ncy, int(math.ceil(H / self.cell))))

    def build(self, pos, select):
        return K.build_cells(pos, select, self.cell, self.ncx, self.ncy)


class Simulation:
    """Stepper for one configuration.

    Holds everything derived from the config (field bands, force constants,
    neighbour grids) so that :meth:`step` only touches the state.  With
    ``brownian=False`` the thermal noise is switched off.
    """

    def __init__(self, config: SimulationConfig, workers: Optional[int] = None, brownian: bool = True):
        self.config = config
        self.workers = config.workers if workers is None else workers
        self.brownian = brownian
        g = config.geometry
        disp = config.dispersion
        R = disp.particle_radius
        self.R = R
        self.W, self.H = g.domain
        self.delta = config.sticking_tolerance
        self.re_beta = physics.clausius_mossotti(disp.material, config.medium, config.omega).re
        self.field = FieldModel(g, R, self.re_beta, config.field_rolloff)
        self.rolloff = self.field.rolloff
        self.bands = self.field.bands
        self.mu = physics.stokes_drag(R, config.medium.dynamic_viscosity)
        self.kT = config.medium.kT
        self.drag_exp = 1.0 if config.cluster_drag_model == "free_draining" else 1.0 / config.growth_dimension
        self.pref = physics.pair_prefactor(R, config.medium.permittivity, self.re_beta)
        self.full = config.dipole_force_model == "full_point_dipole"
        self.dep_k = 2.0 * math.pi * R**3 * config.medium.permittivity * self.re_beta
        self.h = config.gradient_step
        emax = float(np.max(np.hypot(self.bands[:, 5], self.bands[:, 6]))) if len(self.bands) else 0.0
        self.emax = emax
        if config.pair_cutoff is not None:
            self.r_cut = config.pair_cutoff
        else:
            self.r_cut = physics.default_pair_cutoff(R, config.medium, self.re_beta, emax)
        self.f_cut = config.field_cutoff if config.field_cutoff is not None else 25.0 * R
        self.force_grid = _Grid(g.domain, self.r_cut)
        self.contact_grid = _Grid(g.domain, 2 * R * (1 + self.delta) + 0.5 * R)
        # wide enough that the 3x3 block also covers the gradient stencil
        self.field_grid = _Grid(g.domain, self.f_cut + 2 * self.h)
        self.segs = np.array([[e.x0, e.y0, e.x1, e.y1] for e in g.electrodes], dtype=np.float64)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self._contact_cells = None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # ------------------------------------------------------------------
    def new_state(self, seed: Optional[int] = None) -> ParticleState:
        return init_state(self.config, seed)

    def forces(self, state: ParticleState) -> np.ndarray:
        """Per-particle force (DEP + pair), zero on anchored particles."""
        pos = state.positions
        n = state.n
        labels = state.cluster_id
        free = state.mask[labels] == 0
        start, items = self.force_grid.build(pos, np.ones(n, dtype=np.bool_))
        att = state.attached_pos
        a_start, a_items = self.field_grid.build(att, np.ones(len(att), dtype=np.bool_))
        out = np.zeros((n, 2))
        fg, ag = self.force_grid, self.field_grid
        args = (pos, labels, free, self.bands, self.rolloff, start, items, fg.cell, fg.ncx, fg.ncy,
                self.r_cut**2, self.pref, 2 * self.R, self.full, self.dep_k, self.h,
                att, state.attached_mom, a_start, a_items, ag.cell, ag.ncx, ag.ncy, self.f_cut**2)
        if self._pool is None or n < 2 * self.workers:
            K.forces_range(0, n, *args, out)
        else:
            bounds = np.linspace(0, n, self.workers + 1).astype(int)
            futs = [self._pool.submit(K.forces_range, lo, hi, *args, out[lo:hi])
                    for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            for f in futs:
                f.result()
        return out

    def step(self, state: ParticleState) -> list[Event]:
        """Advance ``state`` in place by one time step; returns the events it produced."""
        cfg = self.config
        n = state.n
        dt = cfg.dt
        if n:
            force = self.forces(state)
            noise = state.rng.standard_normal((n, 2))
            kT = self.kT if self.brownian else 0.0
            labels = state.cluster_id
            free = state.mask[labels] == 0
            bad = K.advance(state.positions, labels, free, force, noise, self.mu, kT, dt,
                            self.drag_exp, self.R, self.W, self.H, 10.0 * self.R)
            if bad >= 0:
                raise NumericalBlowupError(
                    f"cluster {bad} moved more than 10R in one step at t={state.time:.6g} s; "
                    f"reduce dt (now {dt:g} s)")
            # resolve overlaps first so a merge never freezes an overlap into a rigid cluster
            self._project(state)
        state.step_count += 1
        state.time = state.step_count * dt
        events = self.merge_and_attach(state)
        if n:
            # positions have not moved since the merge, so its cell list is reused
            self._project(state, self._contact_cells)
        return events

    def _project(self, state: ParticleState, cells=None):
        n = state.n
        labels = state.cluster_id
        free = state.mask[labels] == 0
        cg = self.contact_grid
        start, items = cells if cells is not None else cg.build(state.positions, np.ones(n, dtype=np.bool_))
        reach = 2 * self.R * (1 + self.delta) + 0.5 * self.R
        pairs = K.candidate_pairs(state.positions, labels, start, items, cg.cell, cg.ncx, cg.ncy, reach**2)
        if len(pairs) == 0:
            return
        size = np.bincount(labels, minlength=n).astype(np.float64)
        mobility = np.zeros(n)
        nz = size > 0
        mobility[nz] = 1.0 / (self.mu * size[nz] ** self.drag_exp)
        K.project(state.positions, labels, free, pairs, mobility, self.R, self.W, self.H, PROJECTION_SWEEPS)

    def merge_and_attach(self, state: ParticleState) -> list[Event]:
        """Union touching particles and attach clusters touching electrodes."""
        n = state.n
        if n == 0:
            return []
        cg = self.contact_grid
        start, items = cg.build(state.positions, np.ones(n, dtype=np.bool_))
        self._contact_cells = (start, items)
        events = np.zeros((n + state.n_electrodes**2 + 128, 3), dtype=np.int64)
        ne = K.merge_attach(state.positions, state.parent, state.mask, self.segs, start, items,
                            cg.cell, cg.ncx, cg.ncy, (2 * self.R * (1 + self.delta))**2,
                            self.R * (1 + self.delta), events)
        if ne < 0:
            raise RuntimeError("event buffer overflow")
        self._refresh_attached(state)
        return [Event(state.time, EVENT_KINDS[k], int(a), int(b)) for k, a, b in events[:ne]]

    def _refresh_attached(self, state: ParticleState):
        anchored = np.nonzero(state.mask[state.cluster_id] != 0)[0]
        if len(anchored) == len(state.attached_ids):
            return
        new = np.setdiff1d(anchored, state.attached_ids)
        state.attached_ids = np.concatenate([state.attached_ids, new])
        state.attached_pos = np.ascontiguousarray(np.vstack([state.attached_pos, state.positions[new]]))
        state.attached_mom = np.ascontiguousarray(np.vstack([state.attached_mom,
                                                             self.field.moments(state.positions[new])]))

    def conductance(self, state: ParticleState) -> float:
        return conductance(state, self.config.geometry, self.config.contact_resistance, self.delta)

    # ------------------------------------------------------------------
    def run(self, seed: Optional[int] = None, keep_snapshots: Optional[bool] = None,
            stop_on_bridge: bool = False, state: Optional[ParticleState] = None) -> RunResult:
        cfg = self.config
        if keep_snapshots is None:
            keep_snapshots = cfg.output.write_snapshots
        state = self.new_state(seed) if state is None else state
        n_steps = int(math.floor(cfg.max_time / cfg.dt + 1e-9))
        every = max(1, int(round(cfg.snapshot_interval / cfg.dt)))
        ref = tuple(sorted(cfg.geometry.reference))
        events = self.merge_and_attach(state)
        series: list[tuple[float, float]] = []
        snaps: list[Snapshot] = []
        t_bridge = None
        first_bridge = None

        def note(evts):
            nonlocal t_bridge, first_bridge
            for ev in evts:
                if ev.kind == "bridge":
                    if first_bridge is None:
                        first_bridge = (ev.a, ev.b)
                    if t_bridge is None and (ev.a, ev.b) == ref:
                        t_bridge = ev.t

        def record():
            g = self.conductance(state) if t_bridge is not None else 0.0
            series.append((state.time, g))
            if keep_snapshots:
                snaps.append(Snapshot(state.time, state.positions.copy(), state.cluster_id, state.attached_to))

        note(events)
        record()
        for k in range(1, n_steps + 1):
            evts = self.step(state)
            events.extend(evts)
            note(evts)
            if k % every == 0 or k == n_steps:
                record()
            if stop_on_bridge and first_bridge is not None:
                if not series or series[-1][0] != state.time:
                    record()
                break
        _, t_max = extract_bridging_times(series, PLATEAU_TOL)
        if t_bridge is None:
            t_max = None
        elif t_max is not None:
            t_max = max(t_max, t_bridge)
        return RunResult(t_bridge, t_max, series, events, state, snaps, first_bridge)


def step(state: ParticleState, config: SimulationConfig, brownian: bool = True) -> ParticleState:
    """Advance ``state`` by one step (in place) and return it."""
    with Simulation(config, workers=1, brownian=brownian) as sim:
        sim.step(state)
    return state


def merge_and_attach(state: ParticleState, config: SimulationConfig) -> ParticleState:
    with Simulation(config, workers=1) as sim:
        sim.merge_and_attach(state)
    return state


def run_simulation(config: SimulationConfig, seed: Optional[int] = None, workers: Optional[int] = None,
                   **kwargs) -> RunResult:
    with Simulation(config, workers=workers) as sim:
        return sim.run(seed, **kwargs)
