"""Compiled inner loops of the particle engine.

Every per-particle accumulation runs over neighbours in a fixed order (cell by
cell, ascending index inside a cell), so results do not depend on how particle
ranges are split across worker threads.
"""

import math

import numba as nb
import numpy as np

from ..field import baseline_at, baseline_flat

_OFFSETS = ((-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1))


@nb.njit(cache=True, nogil=True)
def build_cells(pos, select, cell, ncx, ncy):
    """Counting-sort the selected particles into a uniform grid.

    Returns ``(start, items)``: the particles of cell ``c`` are
    ``items[start[c]:start[c + 1]]`` in ascending index order.
    """
    n = pos.shape[0]
    counts = np.zeros(ncx * ncy + 1, dtype=np.int64)
    cid = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if not select[i]:
            continue
        cx = min(max(int(pos[i, 0] / cell), 0), ncx - 1)
        cy = min(max(int(pos[i, 1] / cell), 0), ncy - 1)
        c = cy * ncx + cx
        cid[i] = c
        counts[c + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    items = np.empty(start[-1], dtype=np.int64)
    for i in range(n):
        c = cid[i]
        if c >= 0:
            items[fill[c]] = i
            fill[c] += 1
    return start, items


@nb.njit(cache=True, nogil=True)
def _pair(rx, ry, ex, ey, pref, r_min, full):
    r = math.sqrt(rx * rx + ry * ry)
    e2 = ex * ex + ey * ey
    ux = rx / r
    uy = ry / r
    emag = math.sqrt(e2)
    c = (ux * ex + uy * ey) / emag
    rc = max(r, r_min)
    rc2 = rc * rc
    scale = pref * e2 / (rc2 * rc2)
    if not full:
        mag = scale * (1.0 - 3.0 * c * c)
        return mag * ux, mag * uy
    radial = scale * (1.0 - 5.0 * c * c)
    along = scale * 2.0 * c / emag
    return radial * ux + along * ex, radial * uy + along * ey


@nb.njit(cache=True, nogil=True)
def _field_at(bands, w, x, y, att_pos, att_mom, a_start, a_items, a_cell, a_ncx, a_ncy, fcut2):
    ex, ey = baseline_at(bands, w, x, y)
    if a_items.shape[0] == 0:
        return ex, ey
    cx = min(max(int(x / a_cell), 0), a_ncx - 1)
    cy = min(max(int(y / a_cell), 0), a_ncy - 1)
    for oy in range(max(cy - 1, 0), min(cy + 2, a_ncy)):
        for ox in range(max(cx - 1, 0), min(cx + 2, a_ncx)):
            c = oy * a_ncx + ox
            for q in range(a_start[c], a_start[c + 1]):
                k = a_items[q]
                dx = x - att_pos[k, 0]
                dy = y - att_pos[k, 1]
                s2 = dx * dx + dy * dy
                if s2 >= fcut2:
                    continue
                s = math.sqrt(s2)
                inv3 = 1.0 / (s2 * s)
                ux = dx / s
                uy = dy / s
                mr = att_mom[k, 0] * ux + att_mom[k, 1] * uy
                ex += (3.0 * mr * ux - att_mom[k, 0]) * inv3
                ey += (3.0 * mr * uy - att_mom[k, 1]) * inv3
    return ex, ey


@nb.njit(cache=True, nogil=True)
def _uniform_near(bands, w, x, y, h, att_pos, a_start, a_items, a_cell, a_ncx, a_ncy, fcut2):
    """True when all four gradient stencil points see bit-identical fields.

    That holds when the baseline is flat over the stencil and no attached
    dipole is within reach of any stencil point; the gradient is then exactly 0.
    The attached grid cells are at least f_cut + 2h wide, so the 3x3 block
    around (x, y) holds every dipole that could matter.
    """
    if not baseline_flat(bands, w, x, y, h):
        return False
    if a_items.shape[0] == 0:
        return True
    reach = math.sqrt(fcut2) + 2.0 * h
    reach2 = reach * reach
    cx = min(max(int(x / a_cell), 0), a_ncx - 1)
    cy = min(max(int(y / a_cell), 0), a_ncy - 1)
    for oy in range(max(cy - 1, 0), min(cy + 2, a_ncy)):
        for ox in range(max(cx - 1, 0), min(cx + 2, a_ncx)):
            c = oy * a_ncx + ox
            for q in range(a_start[c], a_start[c + 1]):
                k = a_items[q]
                dx = x - att_pos[k, 0]
                dy = y - att_pos[k, 1]
                if dx * dx + dy * dy < reach2:
                    return False
    return True


@nb.njit(cache=True, nogil=True)
def forces_range(lo, hi, pos, labels, free, bands, w,
                 start, items, cell, ncx, ncy, rcut2, pref, r_min, full,
                 dep_k, h, att_pos, att_mom, a_start, a_items, a_cell, a_ncx, a_ncy, fcut2,
                 out):
    """Total force on particles lo..hi-1 (zero for anchored particles).

    Pair forces use the baseline field at the pair midpoint and skip partners
    in the same rigid cluster; the DEP force uses the perturbed field.
    """
    for i in range(lo, hi):
        fx = 0.0
        fy = 0.0
        if free[i]:
            xi = pos[i, 0]
            yi = pos[i, 1]
            if dep_k != 0.0 and not _uniform_near(bands, w, xi, yi, h, att_pos, a_start, a_items,
                                                  a_cell, a_ncx, a_ncy, fcut2):
                a, b = _field_at(bands, w, xi + h, yi, att_pos, att_mom, a_start, a_items, a_cell, a_ncx, a_ncy, fcut2)
                c, d = _field_at(bands, w, xi - h, yi, att_pos, att_mom, a_start, a_items, a_cell, a_ncx, a_ncy, fcut2)
                gx = ((a * a + b * b) - (c * c + d * d)) / (2.0 * h)
                a, b = _field_at(bands, w, xi, yi + h, att_pos, att_mom, a_start, a_items, a_cell, a_ncx, a_ncy, fcut2)
                c, d = _field_at(bands, w, xi, yi - h, att_pos, att_mom, a_start, a_items, a_cell, a_ncx, a_ncy, fcut2)
                gy = ((a * a + b * b) - (c * c + d * d)) / (2.0 * h)
                fx += dep_k * gx
                fy += dep_k * gy
            cx = min(max(int(xi / cell), 0), ncx - 1)
            cy = min(max(int(yi / cell), 0), ncy - 1)
            li = labels[i]
            # midpoints of partners lie within r_cut / 2; if the baseline is
            # flat there, every midpoint sees the value at the particle itself
            flat = baseline_flat(bands, w, xi, yi, 0.5 * math.sqrt(rcut2))
            e0x, e0y = baseline_at(bands, w, xi, yi)
            for oy in range(max(cy - 1, 0), min(cy + 2, ncy)):
                for ox in range(max(cx - 1, 0), min(cx + 2, ncx)):
                    c0 = oy * ncx + ox
                    for q in range(start[c0], start[c0 + 1]):
                        j = items[q]
                        if j == i or labels[j] == li:
                            continue
                        rx = xi - pos[j, 0]
                        ry = yi - pos[j, 1]
                        if rx * rx + ry * ry >= rcut2:
                            continue
                        if flat:
                            ex, ey = e0x, e0y
                        else:
                            ex, ey = baseline_at(bands, w, 0.5 * (xi + pos[j, 0]), 0.5 * (yi + pos[j, 1]))
                        if ex == 0.0 and ey == 0.0:
                            continue
                        px, py = _pair(rx, ry, ex, ey, pref, r_min, full)
                        fx += px
                        fy += py
        out[i - lo, 0] = fx
        out[i - lo, 1] = fy


@nb.njit(cache=True, nogil=True)
def find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@nb.njit(cache=True, nogil=True)
def labels_of(parent, n):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = find(parent, i)
    return out


@nb.njit(cache=True, nogil=True)
def cluster_bounds(pos, labels, n):
    """Per-root bounding boxes and member counts (indexed by root id)."""
    box = np.empty((n, 4))
    size = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = labels[i]
        if size[r] == 0:
            box[r, 0] = pos[i, 0]
            box[r, 1] = pos[i, 0]
            box[r, 2] = pos[i, 1]
            box[r, 3] = pos[i, 1]
        else:
            box[r, 0] = min(box[r, 0], pos[i, 0])
            box[r, 1] = max(box[r, 1], pos[i, 0])
            box[r, 2] = min(box[r, 2], pos[i, 1])
            box[r, 3] = max(box[r, 3], pos[i, 1])
        size[r] += 1
    return box, size


@nb.njit(cache=True, nogil=True)
def advance(pos, labels, free, force, noise, mu, kT, dt, drag_exp, R, W, H, max_disp):
    """Rigid overdamped move of every free cluster; returns -1 or the offending root.

    ``mu`` is the single-particle drag; a cluster of n members has drag
    ``mu * n**drag_exp`` (1 = free draining, 1/gamma = effective radius).
    """
    n = pos.shape[0]
    box, size = cluster_bounds(pos, labels, n)
    fsum = np.zeros((n, 2))
    for i in range(n):
        if free[i]:
            r = labels[i]
            fsum[r, 0] += force[i, 0]
            fsum[r, 1] += force[i, 1]
    disp = np.zeros((n, 2))
    for r in range(n):
        if size[r] == 0 or not free[r]:
            continue
        mu_c = mu * size[r] ** drag_exp
        amp = math.sqrt(2.0 * kT / mu_c * dt)
        dx = fsum[r, 0] / mu_c * dt + amp * noise[r, 0]
        dy = fsum[r, 1] / mu_c * dt + amp * noise[r, 1]
        if dx * dx + dy * dy > max_disp * max_disp:
            return r
        # keep the whole cluster inside the walls
        dx = min(max(dx, R - box[r, 0]), W - R - box[r, 1])
        dy = min(max(dy, R - box[r, 2]), H - R - box[r, 3])
        disp[r, 0] = dx
        disp[r, 1] = dy
    for i in range(n):
        if free[i]:
            r = labels[i]
            pos[i, 0] += disp[r, 0]
            pos[i, 1] += disp[r, 1]
    return -1


@nb.njit(cache=True, nogil=True)
def candidate_pairs(pos, labels, start, items, cell, ncx, ncy, reach2):
    """Pairs (i < j) from different clusters closer than sqrt(reach2)."""
    n = pos.shape[0]
    cap = 16
    out = np.empty((cap, 2), dtype=np.int64)
    m = 0
    for i in range(n):
        cx = min(max(int(pos[i, 0] / cell), 0), ncx - 1)
        cy = min(max(int(pos[i, 1] / cell), 0), ncy - 1)
        for oy in range(max(cy - 1, 0), min(cy + 2, ncy)):
            for ox in range(max(cx - 1, 0), min(cx + 2, ncx)):
                c0 = oy * ncx + ox
                for q in range(start[c0], start[c0 + 1]):
                    j = items[q]
                    if j <= i or labels[j] == labels[i]:
                        continue
                    dx = pos[i, 0] - pos[j, 0]
                    dy = pos[i, 1] - pos[j, 1]
                    if dx * dx + dy * dy >= reach2:
                        continue
                    if m == cap:
                        cap *= 2
                        bigger = np.empty((cap, 2), dtype=np.int64)
                        bigger[:m] = out[:m]
                        out = bigger
                    out[m, 0] = i
                    out[m, 1] = j
                    m += 1
    # sort so the visiting order is independent of the grid
    keys = out[:m, 0] * n + out[:m, 1]
    order = np.argsort(keys, kind="mergesort")
    return out[:m][order]


@nb.njit(cache=True, nogil=True)
def project(pos, labels, free, pairs, mobility, R, W, H, sweeps):
    """Push overlapping clusters apart along centre lines (Gauss-Seidel over pairs).

    Clusters move rigidly through a per-root shift; anchored clusters do not
    move.  Shifts are clipped so clusters stay inside the walls.
    """
    n = pos.shape[0]
    if pairs.shape[0] == 0:
        return
    box, size = cluster_bounds(pos, labels, n)
    shift = np.zeros((n, 2))
    d0 = 2.0 * R
    for _ in range(sweeps):
        moved = False
        for k in range(pairs.shape[0]):
            i = pairs[k, 0]
            j = pairs[k, 1]
            ri = labels[i]
            rj = labels[j]
            mi = mobility[ri] if free[i] else 0.0
            mj = mobility[rj] if free[j] else 0.0
            if mi + mj == 0.0:
                continue
            dx = (pos[j, 0] + shift[rj, 0]) - (pos[i, 0] + shift[ri, 0])
            dy = (pos[j, 1] + shift[rj, 1]) - (pos[i, 1] + shift[ri, 1])
            d = math.sqrt(dx * dx + dy * dy)
            if d >= d0:
                continue
            if d == 0.0:
                dx, dy, d = 1.0, 0.0, 1.0
            over = d0 - d
            ux = dx / d
            uy = dy / d
            wi = mi / (mi + mj)
            wj = mj / (mi + mj)
            for r, s, wt in ((ri, -1.0, wi), (rj, 1.0, wj)):
                if wt == 0.0:
                    continue
                sx = shift[r, 0] + s * wt * over * ux
                sy = shift[r, 1] + s * wt * over * uy
                shift[r, 0] = min(max(sx, R - box[r, 0]), W - R - box[r, 1])
                shift[r, 1] = min(max(sy, R - box[r, 2]), H - R - box[r, 3])
            moved = True
        if not moved:
            break
    for i in range(n):
        if free[i]:
            r = labels[i]
            pos[i, 0] += shift[r, 0]
            pos[i, 1] += shift[r, 1]


@nb.njit(cache=True, nogil=True)
def _seg_dist(seg, k, x, y):
    cx = min(max(x, seg[k, 0]), seg[k, 2])
    cy = min(max(y, seg[k, 1]), seg[k, 3])
    return math.sqrt((x - cx) ** 2 + (y - cy) ** 2)


@nb.njit(cache=True, nogil=True)
def _union(parent, mask, a, b, events, ne, kind_a, kind_b):
    """Union two sets (root = smaller index); log stick/attach/bridge events."""
    ra = find(parent, a)
    rb = find(parent, b)
    if ra == rb:
        return ne
    ma = mask[ra]
    mb = mask[rb]
    lo = min(ra, rb)
    hi = max(ra, rb)
    parent[hi] = lo
    mask[lo] = ma | mb
    if kind_a >= 0:
        events[ne, 0] = kind_a
        events[ne, 1] = a
        events[ne, 2] = kind_b
        ne += 1
    elif ma == 0 and mb == 0:
        events[ne, 0] = 0
        events[ne, 1] = a
        events[ne, 2] = b
        ne += 1
    elif (ma == 0) != (mb == 0):
        events[ne, 0] = 1
        events[ne, 1] = a if ma == 0 else b
        m = ma | mb
        e = 0
        while not (m >> e) & 1:
            e += 1
        events[ne, 2] = e
        ne += 1
    if ma != 0 and mb != 0:
        for ea in range(63):
            if not (ma >> ea) & 1:
                continue
            for eb in range(63):
                if not (mb >> eb) & 1 or (ma >> eb) & 1 or (mb >> ea) & 1:
                    continue
                events[ne, 0] = 2
                events[ne, 1] = min(ea, eb)
                events[ne, 2] = max(ea, eb)
                ne += 1
    return ne


@nb.njit(cache=True, nogil=True)
def merge_attach(pos, parent, mask, segs, start, items, cell, ncx, ncy, contact2, attach_d, events):
    """Union touching particles, attach particles near electrodes.

    Electrode ``e`` is union-find node ``n + e``.  ``events`` rows are
    (kind, a, b) with kind 0 = stick (particles a, b), 1 = attach (particle a,
    electrode b), 2 = bridge (electrodes a < b).  Returns the event count.
    """
    n = pos.shape[0]
    ne = 0
    for i in range(n):
        cx = min(max(int(pos[i, 0] / cell), 0), ncx - 1)
        cy = min(max(int(pos[i, 1] / cell), 0), ncy - 1)
        for oy in range(max(cy - 1, 0), min(cy + 2, ncy)):
            for ox in range(max(cx - 1, 0), min(cx + 2, ncx)):
                c0 = oy * ncx + ox
                for q in range(start[c0], start[c0 + 1]):
                    j = items[q]
                    if j <= i:
                        continue
                    dx = pos[i, 0] - pos[j, 0]
                    dy = pos[i, 1] - pos[j, 1]
                    if dx * dx + dy * dy <= contact2:
                        if ne + 64 >= events.shape[0]:
                            return -1
                        ne = _union(parent, mask, i, j, events, ne, -1, -1)
        for e in range(segs.shape[0]):
            if _seg_dist(segs, e, pos[i, 0], pos[i, 1]) <= attach_d:
                ri = find(parent, i)
                re_ = find(parent, n + e)
                if ri == re_:
                    continue
                if ne + 64 >= events.shape[0]:
                    return -1
                fresh = mask[ri] == 0
                ne = _union(parent, mask, i, n + e, events, ne, 1 if fresh else -1, e)
    return ne
