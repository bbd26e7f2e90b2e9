import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fielddla.engine import (ContactGraph, NumericalBlowupError, ParticleState, PlacementError, Simulation,
                             bridging_status, conductance, init_state, merge_and_attach, run_simulation)
from fielddla.engine.state import min_pair_distance
from fielddla.field import FieldModel, grad_field_sq
from fielddla.physics import dep_force, pair_forces_bruteforce

from conftest import E_TH, R, slot_config


def test_empty_dispersion_is_valid():
    st_ = init_state(slot_config(count=0))
    assert st_.n == 0
    with Simulation(slot_config(count=0)) as sim:
        res = sim.run()
    assert res.t_min is None and all(g == 0 for _, g in res.conductance_series)


def test_two_particles_in_a_tight_box():
    cfg = slot_config(gap_r=4.3, width_r=6.5, count=2)
    for seed in range(20):
        pos = init_state(cfg, seed).positions
        assert math.dist(pos[0], pos[1]) >= 2 * R * (1 + cfg.sticking_tolerance)


def test_placement_is_deterministic():
    cfg = slot_config(count=200)
    a, b = init_state(cfg, 7), init_state(cfg, 7)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, init_state(cfg, 8).positions)
    assert min_pair_distance(a.positions) >= 2 * R * 1.05 * (1 - 1e-12)


def test_unreachable_density_raises():
    with pytest.raises(PlacementError):
        init_state(slot_config(gap_r=10, width_r=10, count=23))


# --------------------------------------------------------------------------
# deterministic two-body motion

def _pair_run(offset, steps=400):
    cfg = slot_config(gap_r=40, width_r=40, field=8 * E_TH, dt=1e-3)
    c = np.array([20e-6, 20e-6])
    st_ = ParticleState.from_positions(np.array([c, c + offset]), R, 2)
    dists = [math.dist(*st_.positions)]
    with Simulation(cfg, brownian=False) as sim:
        for _ in range(steps):
            sim.step(st_)
            dists.append(math.dist(*st_.positions))
            if st_.cluster_id[0] == st_.cluster_id[1]:
                break
    return np.array(dists), st_


def test_axial_pair_closes_monotonically():
    d, st_ = _pair_run(np.array([0.0, 4 * R]))
    assert st_.cluster_id[0] == st_.cluster_id[1], "pair never touched"
    assert np.all(np.diff(d) < 0)


def test_transverse_pair_separates():
    d, _ = _pair_run(np.array([4 * R, 0.0]), steps=200)
    assert np.all(np.diff(d) > 0)


def test_blowup_guard():
    cfg = slot_config(gap_r=40, width_r=40, field=400 * E_TH, dt=1.0)
    st_ = ParticleState.from_positions(np.array([[20e-6, 20e-6], [20e-6, 22.5e-6]]), R, 2)
    with Simulation(cfg, brownian=False) as sim, pytest.raises(NumericalBlowupError, match="reduce dt"):
        sim.step(st_)


# --------------------------------------------------------------------------
# merge, attach, bridge

def test_touching_free_particles_merge():
    cfg = slot_config()
    st_ = ParticleState.from_positions([[30e-6, 20e-6], [32.05e-6, 20e-6], [50e-6, 20e-6]], R, 2)
    merge_and_attach(st_, cfg)
    lab = st_.cluster_id
    assert lab[0] == lab[1] != lab[2]
    assert np.all(st_.attached_to == -1)


def test_free_cluster_joins_attached_cluster():
    cfg = slot_config()
    st_ = ParticleState.from_positions([[30e-6, 1.02e-6], [30e-6, 3.05e-6], [31.2e-6, 4.7e-6], [60e-6, 20e-6]], R, 2)
    merge_and_attach(st_, cfg)
    assert list(st_.attached_to) == [0, 0, 0, -1]


def test_particle_touching_both_sides_fires_bridge():
    cfg = slot_config(gap_r=5, width_r=20)
    st_ = ParticleState.from_positions([[10e-6, 1.0e-6], [10e-6, 3.02e-6], [10.3e-6, 3.99e-6]], R, 2)
    with Simulation(cfg) as sim:
        events = sim.merge_and_attach(st_)
    assert [e.kind for e in events].count("bridge") == 1
    assert bridging_status(st_) == (0, 1)


def _chain(n, gap, x=20e-6):
    ys = np.linspace(R, gap - R, n)
    return np.column_stack([np.full(n, x), ys])


def _bfs_bridged(pos, geometry, tol):
    """Brute-force path search over the contact graph (independent of union-find)."""
    n = len(pos)
    ne = len(geometry.electrodes)
    adj = [[] for _ in range(n + ne)]
    for i in range(n):
        for j in range(i + 1, n):
            if math.dist(pos[i], pos[j]) <= 2 * R * (1 + tol):
                adj[i].append(j)
                adj[j].append(i)
        for e, seg in enumerate(geometry.electrodes):
            if seg.distance_to(*pos[i]) <= R * (1 + tol):
                adj[i].append(n + e)
                adj[n + e].append(i)
    seen = {n}
    todo = deque([n])
    while todo:
        for v in adj[todo.popleft()]:
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return n + 1 in seen


def test_constructed_chain_bridges():
    cfg = slot_config(gap_r=20, width_r=40)
    n = math.ceil(20 / 2)
    st_ = ParticleState.from_positions(_chain(n, 20e-6), R, 2)
    merge_and_attach(st_, cfg)
    assert bridging_status(st_) == (0, 1)
    assert _bfs_bridged(st_.positions, cfg.geometry, cfg.sticking_tolerance)


def test_chain_with_a_gap_does_not_bridge():
    cfg = slot_config(gap_r=20, width_r=40)
    pos = np.delete(_chain(10, 20e-6), 4, axis=0)
    st_ = ParticleState.from_positions(pos, R, 2)
    merge_and_attach(st_, cfg)
    assert bridging_status(st_) is None
    assert not _bfs_bridged(pos, cfg.geometry, cfg.sticking_tolerance)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(5, 60))
def test_union_find_agrees_with_path_search(seed, n):
    rng = np.random.default_rng(seed)
    gap = 10e-6
    cfg = slot_config(gap_r=10, width_r=12)
    pos = np.column_stack([rng.uniform(R, 11e-6, n), rng.uniform(R, gap - R, n)])
    st_ = ParticleState.from_positions(pos, R, 2)
    merge_and_attach(st_, cfg)
    assert (bridging_status(st_) is not None) == _bfs_bridged(pos, cfg.geometry, cfg.sticking_tolerance)


def test_no_attached_particles_means_no_bridge():
    st_ = ParticleState.from_positions([[20e-6, 20e-6]], R, 2)
    merge_and_attach(st_, slot_config())
    assert bridging_status(st_) is None


# --------------------------------------------------------------------------
# conductance

@pytest.mark.parametrize("n", [1, 5, 20])
def test_series_chain_conductance(n):
    gap = 2 * R * n
    cfg = slot_config(gap_r=2 * n, width_r=20)
    st_ = ParticleState.from_positions(_chain(n, gap, 10e-6), R, 2)
    merge_and_attach(st_, cfg)
    G = conductance(st_, cfg.geometry, 1e3, cfg.sticking_tolerance)
    assert G == pytest.approx(1 / ((n + 1) * 1e3), rel=1e-9)


@pytest.mark.parametrize("n", [3, 12])
def test_parallel_chains_conductance(n):
    gap = 2 * R * n
    cfg = slot_config(gap_r=2 * n, width_r=30)
    pos = np.vstack([_chain(n, gap, 8e-6), _chain(n, gap, 20e-6)])
    st_ = ParticleState.from_positions(pos, R, 2)
    merge_and_attach(st_, cfg)
    G = conductance(st_, cfg.geometry, 250.0, cfg.sticking_tolerance)
    assert G == pytest.approx(2 / ((n + 1) * 250.0), rel=1e-9)


def test_unbridged_conductance_is_zero():
    cfg = slot_config(gap_r=20, width_r=40)
    st_ = ParticleState.from_positions(_chain(5, 10e-6), R, 2)
    merge_and_attach(st_, cfg)
    assert conductance(st_, cfg.geometry, 1e3, cfg.sticking_tolerance) == 0.0


def test_contact_graph_laplacian_rows_sum_to_zero():
    cfg = slot_config(gap_r=20, width_r=40)
    g = ContactGraph.build(_chain(10, 20e-6), R, cfg.geometry, 0.05, 1e3)
    L = g.laplacian()
    np.testing.assert_allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0, atol=1e-18)


def test_conductance_non_decreasing_after_bridge():
    """A complete chain plus loose particles: G may only grow once the gap is bridged."""
    cfg = slot_config(gap_r=20, width_r=24, field=6 * E_TH, dt=5e-4, max_time=1.0)
    rng = np.random.default_rng(3)
    chain = _chain(10, 20e-6, 12e-6)
    loose = np.column_stack([rng.uniform(2e-6, 9e-6, 40), rng.uniform(2e-6, 18e-6, 40)])
    keep = [0]
    for i in range(1, len(loose)):
        if min(math.dist(loose[i], loose[k]) for k in keep) > 2.3e-6:
            keep.append(i)
    st_ = ParticleState.from_positions(np.vstack([chain, loose[keep]]), R, 2)
    with Simulation(cfg) as sim:
        res = sim.run(state=st_)
    assert res.bridged and res.first_bridge == (0, 1)
    g = [G for t, G in res.conductance_series if t >= res.t_min]
    assert g[0] > 0
    assert all(b >= a * (1 - 1e-9) for a, b in zip(g, g[1:]))
    assert all(G == 0 for t, G in res.conductance_series if t < res.t_min)
    assert res.t_min <= res.t_max


# --------------------------------------------------------------------------
# neighbour search and determinism

def _brute_total(sim, state):
    pos = state.positions
    model = FieldModel(sim.config.geometry, R, sim.re_beta, sim.rolloff)
    att = state.attached_pos
    pair = pair_forces_bruteforce(pos, R, sim.config.medium.permittivity, sim.re_beta,
                                  lambda x, y: model.baseline((x, y)).e, r_cut=sim.r_cut,
                                  groups=state.cluster_id)
    out = np.zeros_like(pos)
    free = state.free
    for i in range(state.n):
        if not free[i]:
            continue
        g = grad_field_sq(lambda p: model.perturbed(att, p), pos[i], sim.h)
        out[i] = pair[i] + np.array(dep_force(R, sim.config.medium, sim.re_beta, g))
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cell_list_equals_brute_force(seed):
    cfg = slot_config(gap_r=30, width_r=60, count=150, field=6 * E_TH, seed=seed,
                      electrodes=[[20, 0, 40, 0, 6 * E_TH * 30e-6], [20, 30, 40, 30, 0]],
                      extra="field_cutoff_m = 1e-3\npair_cutoff_m = 9e-6")
    with Simulation(cfg) as sim:
        st_ = sim.new_state()
        for _ in range(40):
            sim.step(st_)
        assert len(st_.attached_pos) > 0 and np.any(st_.free)
        got = sim.forces(st_)
        want = _brute_total(sim, st_)
    scale = np.abs(want).max()
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12 * scale)


def test_invariants_hold_during_a_run():
    cfg = slot_config(gap_r=30, width_r=60, count=200, field=4 * E_TH, dt=2e-3, seed=5)
    with Simulation(cfg) as sim:
        st_ = sim.new_state()
        attached = 0
        for _ in range(300):
            sim.step(st_)
            assert st_.n == 200
            a = int(np.sum(st_.attached_to >= 0))
            assert a >= attached
            attached = a
        pos = st_.positions
        assert np.all((pos >= R * (1 - 1e-12)) & (pos <= np.array([60e-6, 30e-6]) - R * (1 - 1e-12)))
        # cluster-consistent attachment
        for root in np.unique(st_.cluster_id):
            assert len(set(st_.attached_to[st_.cluster_id == root])) == 1
        assert min_pair_distance(pos) >= 2 * R * (1 - 1e-3)


def test_same_seed_same_run_any_worker_count():
    cfg = slot_config(gap_r=30, width_r=60, count=150, field=4 * E_TH, dt=2e-3, max_time=0.3, seed=11)
    runs = [run_simulation(cfg, workers=w) for w in (1, 2, 8)]
    ref = runs[0]
    for r in runs[1:]:
        assert r.events == ref.events
        assert np.array_equal(r.final_state.positions, ref.final_state.positions)
        assert r.conductance_series == ref.conductance_series


def test_effective_radius_drag_moves_clusters_faster():
    """Rigid doublet under a constant DEP pull: n**(1/gamma) drag beats free draining."""
    base = dict(gap_r=20, width_r=60, field=8 * E_TH, dt=1e-3,
                electrodes=[[5, 0, 25, 0, 8 * E_TH * 20e-6], [5, 20, 25, 20, 0]])
    pos = np.array([[30e-6, 10e-6], [32.05e-6, 10e-6]])
    moved = {}
    for model in ("free_draining", "effective_radius"):
        cfg = slot_config(**base, extra=f'cluster_drag_model = "{model}"\nfield_rolloff_m = 20e-6')
        st_ = ParticleState.from_positions(pos, R, 2)
        with Simulation(cfg, brownian=False) as sim:
            sim.merge_and_attach(st_)
            sim.step(st_)
        moved[model] = np.linalg.norm(st_.positions[0] - pos[0])
    assert moved["effective_radius"] > moved["free_draining"] > 0
