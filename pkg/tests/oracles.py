"""Independent brute-force oracles.

Everything here is deliberately written with a different discipline than the
production code it checks: scalar loops instead of vectorized numpy, priority
queues with a different queue structure, exhaustive scans instead of early
exits. Keep it slow and obvious.
"""
from __future__ import annotations

import bisect
import math

import numpy as np


# -- linear algebra -----------------------------------------------------------

def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(x.shape[0]):
        row = x[i] - max(x[i])
        e = [math.exp(v) for v in row]
        z = sum(e)
        out[i] = [v / z for v in e]
    return out


def attention_per_head(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int) -> np.ndarray:
    tq, d = q.shape
    dh = d // heads
    out = np.zeros((tq, d), dtype=np.float64)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = np.zeros((tq, k.shape[0]))
        for i in range(tq):
            for j in range(k.shape[0]):
                scores[i, j] = float(np.dot(q[i, sl], k[j, sl])) / math.sqrt(dh)
        w = softmax_rows(scores)
        for i in range(tq):
            for j in range(k.shape[0]):
                out[i, sl] += w[i, j] * v[j, sl]
    return out


def gru_scalar(x: np.ndarray, h: np.ndarray, w_ih: np.ndarray, w_hh: np.ndarray,
               b_ih: np.ndarray, b_hh: np.ndarray) -> np.ndarray:
    """Scalar re-implementation of the documented gate equations.

    Gate order (reset, update, candidate); h' = (1-z)*h + z*n.
    """
    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    hidden = h.shape[0]
    gi = [sum(float(x[a]) * float(w_ih[a, c]) for a in range(x.shape[0])) + float(b_ih[c])
          for c in range(3 * hidden)]
    gh = [sum(float(h[a]) * float(w_hh[a, c]) for a in range(h.shape[0])) + float(b_hh[c])
          for c in range(3 * hidden)]
    out = np.zeros(hidden)
    for c in range(hidden):
        r = sig(gi[c] + gh[c])
        z = sig(gi[hidden + c] + gh[hidden + c])
        n = math.tanh(gi[2 * hidden + c] + r * gh[2 * hidden + c])
        out[c] = (1.0 - z) * float(h[c]) + z * n
    return out


def finite_difference(f, arr: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f with respect to every entry of arr."""
    g = np.zeros_like(arr, dtype=np.float64).reshape(-1)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        fp = f()
        flat[i] = keep - step
        fm = f()
        flat[i] = keep
        g[i] = (fp - fm) / (2 * step)
    return g.reshape(arr.shape)


# -- grid geometry ---------------------------------------------------------------

def dijkstra_grid(occ: np.ndarray, start: tuple[int, int], resolution: float = 1.0):
    """Single-source shortest paths on free cells, 8-connected.

    Diagonal steps cost sqrt(2) and are allowed only when both orthogonal
    neighbours are free. Uses a sorted list (bisect.insort) rather than a
    heap. Returns an (H, W) array of distances in meters, inf if unreachable.
    """
    h, w = occ.shape
    dist = np.full((h, w), np.inf)
    if occ[start]:
        return dist
    dist[start] = 0.0
    queue: list[tuple[float, int, int]] = [(0.0, start[0], start[1])]
    moves = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
             (-1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)),
             (1, -1, math.sqrt(2)), (1, 1, math.sqrt(2))]
    while queue:
        d, r, c = queue.pop(0)
        if d > dist[r, c]:
            continue
        for dr, dc, cost in moves:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or occ[nr, nc]:
                continue
            if dr != 0 and dc != 0 and (occ[r + dr, c] or occ[r, c + dc]):
                continue
            nd = d + cost
            if nd < dist[nr, nc] - 1e-12:
                dist[nr, nc] = nd
                bisect.insort(queue, (nd, nr, nc))
    return dist * resolution


def bellman_distance_field(occ: np.ndarray, start: tuple[int, int],
                           resolution: float = 1.0) -> np.ndarray:
    """Same metric as dijkstra_grid, computed by repeated relaxation sweeps."""
    h, w = occ.shape
    big = 1e18
    dist = np.full((h, w), big)
    if occ[start]:
        return np.where(dist >= big, np.inf, dist)
    dist[start[0], start[1]] = 0.0
    free = ~occ
    s2 = math.sqrt(2)
    while True:
        prev = dist.copy()
        for dr, dc, cost in [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
                             (-1, -1, s2), (-1, 1, s2), (1, -1, s2), (1, 1, s2)]:
            shifted = np.full((h, w), big)
            src = dist[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)]
            shifted[max(0, dr):h - max(0, -dr), max(0, dc):w - max(0, -dc)] = src
            cand = shifted + cost
            if dr != 0 and dc != 0:
                orth1 = np.ones((h, w), dtype=bool)
                orth2 = np.ones((h, w), dtype=bool)
                o1 = free[max(0, -dr):h - max(0, dr), :]
                orth1[max(0, dr):h - max(0, -dr), :] = o1
                o2 = free[:, max(0, -dc):w - max(0, dc)]
                orth2[:, max(0, dc):w - max(0, -dc)] = o2
                cand = np.where(orth1 & orth2, cand, big)
            dist = np.where(free & (cand < dist), cand, dist)
        if np.array_equal(prev, dist):
            break
    return np.where(dist >= big / 2, np.inf, dist * resolution)


def ray_hit_exhaustive(occ: np.ndarray, x: float, y: float, angle: float,
                       max_range: float, resolution: float = 1.0) -> float:
    """Exact first-hit distance by slab-testing every occupied cell.

    Coordinates in meters, x along columns, y along rows (downward). A cell is
    hit when the ray's segment inside it has positive length.
    """
    dx, dy = math.cos(angle), math.sin(angle)
    best = max_range
    h, w = occ.shape
    for r in range(h):
        for c in range(w):
            if not occ[r, c]:
                continue
            x0, x1 = c * resolution, (c + 1) * resolution
            y0, y1 = r * resolution, (r + 1) * resolution
            tmin, tmax = 0.0, best
            ok = True
            for p, d, lo, hi in ((x, dx, x0, x1), (y, dy, y0, y1)):
                if abs(d) < 1e-300:
                    if not (lo <= p <= hi):
                        ok = False
                        break
                else:
                    t1, t2 = (lo - p) / d, (hi - p) / d
                    if t1 > t2:
                        t1, t2 = t2, t1
                    tmin, tmax = max(tmin, t1), min(tmax, t2)
            if ok and tmin < tmax and tmin < best:
                best = max(tmin, 0.0)
    return best


def ray_march_ink(raster: np.ndarray, x: float, y: float,
                  direction: tuple[float, float],
                  threshold: int = 128, step: float = 0.5) -> float:
    """First-ink distance along a ray in pixel units, by half-pixel marching.

    Matches the production semantics: the first sample whose pixel is inked
    brackets the hit, then bisection refines to the exact entry of the
    detected ink region. No ink before the raster border gives the exact
    border distance. Scalar loops throughout.
    """
    h, w = raster.shape
    dx, dy = direction

    def inked(px: float, py: float) -> bool:
        ix, iy = int(math.floor(px)), int(math.floor(py))
        if not (0 <= ix < w and 0 <= iy < h):
            return False
        return raster[iy, ix] >= threshold

    border = border_exit_distance(w, h, x, y, direction)
    if inked(x, y):
        return 0.0
    t = 0.0
    prev_t = 0.0
    while t <= border:
        if inked(x + t * dx, y + t * dy):
            lo, hi = prev_t, t
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if inked(x + mid * dx, y + mid * dy):
                    hi = mid
                else:
                    lo = mid
            return hi
        prev_t = t
        t += step
    return border


def border_exit_distance(w: int, h: int, x: float, y: float,
                         direction: tuple[float, float]) -> float:
    """Exact distance from an interior point to the raster edge along a ray."""
    dx, dy = direction
    best = math.inf
    if dx > 1e-300:
        best = min(best, (w - x) / dx)
    elif dx < -1e-300:
        best = min(best, -x / dx)
    if dy > 1e-300:
        best = min(best, (h - y) / dy)
    elif dy < -1e-300:
        best = min(best, -y / dy)
    return best


def gae_forward_sum(rewards, values, dones, bootstrap, gamma, lam):
    """GAE by direct forward summation: A_t = sum_k (gamma*lam)^k delta_{t+k},
    truncating each sum at the first done."""
    t_len = len(rewards)
    vnext = list(values[1:]) + [bootstrap]
    deltas = [rewards[t] + gamma * vnext[t] * (1.0 - dones[t]) - values[t]
              for t in range(t_len)]
    adv = np.zeros(t_len)
    for t in range(t_len):
        acc = 0.0
        scale = 1.0
        for k in range(t, t_len):
            acc += scale * deltas[k]
            if dones[k]:
                break
            scale *= gamma * lam
        adv[t] = acc
    return adv
