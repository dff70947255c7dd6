"""Compiled fast-marching kernels (numba).

Vertices are accepted in nondecreasing distance order from a binary heap keyed
on (distance, vertex), so ties go to the lowest vertex index.  Each acceptance
updates the remaining vertices of every incident face with

* the edge update  D(a) + |a - c|, and
* when the third corner b is also accepted, a two-point update through (a, b).

Two two-point updates are available.  PLANAR fits a plane wave through (a, b);
POINT unfolds the triangle and places a virtual point source at distances
D(a), D(b) from a and b on the far side of ab, taking D(c) = |c - source|.
The point version is exact on developable patches and removes the large
first-order error around point sources, but it is only meaningful when both
corners inherit their distance from the same source; otherwise (several sources,
fronts meeting) the planar update is used.  Either update is rejected unless the
characteristic enters c across the opposite edge and D(c) >= max(D(a), D(b));
the edge updates then stand in (obtuse corners land here).
"""
from __future__ import annotations

import heapq

import numpy as np
from numba import njit

FAR, TRIAL, ALIVE = 0, 1, 2
PLANAR, POINT = 0, 1


@njit(cache=True)
def _triangle_update(pa, pb, pc, da, db):
    ea0 = pa[0] - pc[0]
    ea1 = pa[1] - pc[1]
    ea2 = pa[2] - pc[2]
    eb0 = pb[0] - pc[0]
    eb1 = pb[1] - pc[1]
    eb2 = pb[2] - pc[2]
    g11 = ea0 * ea0 + ea1 * ea1 + ea2 * ea2
    g12 = ea0 * eb0 + ea1 * eb1 + ea2 * eb2
    g22 = eb0 * eb0 + eb1 * eb1 + eb2 * eb2
    det = g11 * g22 - g12 * g12
    if det <= 1e-300:
        return np.inf
    q11 = g22 / det
    q12 = -g12 / det
    q22 = g11 / det
    # a*dc^2 - 2*b*dc + c = 0 with a = 1'Q1, b = 1'Qt, c = t'Qt - 1
    qa = q11 + 2.0 * q12 + q22
    qb = (q11 + q12) * da + (q12 + q22) * db
    qc = q11 * da * da + 2.0 * q12 * da * db + q22 * db * db - 1.0
    disc = qb * qb - qa * qc
    if disc < 0.0:
        return np.inf
    dc = (qb + np.sqrt(disc)) / qa
    ta = da - dc
    tb = db - dc
    wa = q11 * ta + q12 * tb
    wb = q12 * ta + q22 * tb
    if wa > 0.0 or wb > 0.0:
        return np.inf
    if dc < da or dc < db:
        return np.inf
    return dc


@njit(cache=True)
def _point_update(pa, pb, pc, da, db):
    c = _distance(pa, pb)
    b = _distance(pa, pc)
    a = _distance(pb, pc)
    # unfold: A = (0, 0), B = (c, 0), C = (cx, cy) with cy > 0
    cx = (b * b - a * a + c * c) / (2.0 * c)
    cy2 = b * b - cx * cx
    if cy2 <= 0.0:
        return np.inf
    cy = np.sqrt(cy2)
    sx = (da * da - db * db + c * c) / (2.0 * c)
    sy2 = da * da - sx * sx
    if sy2 < 0.0:
        return np.inf
    sy = -np.sqrt(sy2)
    # crossing of segment source -> C with the line AB must lie on AB
    x = sx + (cx - sx) * (-sy) / (cy - sy)
    if x < 0.0 or x > c:
        return np.inf
    dc = np.sqrt((cx - sx) ** 2 + (cy - sy) ** 2)
    if dc < da or dc < db:
        return np.inf
    return dc


@njit(cache=True)
def _distance(p, q):
    return np.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)


@njit(cache=True)
def march(pos, faces, vf_ptr, vf_idx, sources, max_dist, dist, state, origin, update):
    """Run fast marching in place on ``dist``/``state``.

    ``dist`` must be +inf and ``state`` FAR everywhere on entry except where the
    caller wants it otherwise.  Returns the accepted vertices in acceptance order
    and every vertex whose entries were touched (for cheap resets).
    """
    heap = [(0.0, np.int64(0))]
    heap.pop()
    touched = [np.int64(0)]
    touched.pop()
    order = [np.int64(0)]
    order.pop()
    for i in range(sources.shape[0]):
        s = sources[i]
        if dist[s] > 0.0:
            dist[s] = 0.0
            state[s] = TRIAL
            origin[s] = i
            touched.append(s)
            heapq.heappush(heap, (0.0, s))
    while len(heap) > 0:
        d, v = heapq.heappop(heap)
        if state[v] == ALIVE or d > dist[v]:
            continue
        if d > max_dist:
            break
        state[v] = ALIVE
        order.append(v)
        for k in range(vf_ptr[v], vf_ptr[v + 1]):
            f = vf_idx[k]
            for corner in range(3):
                c = faces[f, corner]
                if state[c] == ALIVE:
                    continue
                b = faces[f, 0] + faces[f, 1] + faces[f, 2] - v - c
                cand = dist[v] + _distance(pos[v], pos[c])
                src = origin[v]
                if state[b] == ALIVE:
                    alt = dist[b] + _distance(pos[b], pos[c])
                    if alt < cand:
                        cand = alt
                        src = origin[b]
                    shared = origin[v] == origin[b] and origin[v] >= 0
                    if update == POINT and shared:
                        tri = _point_update(pos[v], pos[b], pos[c], dist[v], dist[b])
                    else:
                        tri = _triangle_update(pos[v], pos[b], pos[c], dist[v], dist[b])
                    if tri < cand:
                        cand = tri
                        # -1 marks a front with no single point source behind it
                        src = origin[v] if shared else -1
                if cand < dist[c]:
                    if state[c] == FAR:
                        touched.append(c)
                    dist[c] = cand
                    origin[c] = src
                    state[c] = TRIAL
                    heapq.heappush(heap, (cand, c))
    return np.array(order, dtype=np.int64), np.array(touched, dtype=np.int64)


@njit(cache=True)
def local_balls(pos, faces, vf_ptr, vf_idx, radius, update):
    """Truncated fast marching from every vertex; COO triplets with D <= radius."""
    n = pos.shape[0]
    dist = np.full(n, np.inf)
    state = np.zeros(n, dtype=np.int8)
    origin = np.zeros(n, dtype=np.int64)
    rows = [np.int64(0)]
    rows.pop()
    cols = [np.int64(0)]
    cols.pop()
    vals = [0.0]
    vals.pop()
    src = np.zeros(1, dtype=np.int64)
    for x in range(n):
        src[0] = x
        order, touched = march(pos, faces, vf_ptr, vf_idx, src, radius, dist, state, origin, update)
        for y in order:
            rows.append(x)
            cols.append(y)
            vals.append(dist[y])
        for y in touched:
            dist[y] = np.inf
            state[y] = FAR
    return np.array(rows), np.array(cols), np.array(vals)
