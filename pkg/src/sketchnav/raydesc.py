"""Ray-fan map descriptors.

Each map raster is summarized by a uniform interior lattice of keypoints;
every keypoint casts a fan of uniformly spaced rays and records the
normalized distance to the first inked pixel (or to the raster border when
no ink is met), plus its own lattice coordinates. The descriptor matrix has
one column per keypoint: N ray distances followed by (x, y).

Distance semantics: samples are taken every half pixel along the ray; the
first sample whose pixel is at or above the ink threshold brackets the hit,
and bisection refines to the exact entry of the detected ink region. The
border distance is closed form. Distances are divided by the raster diagonal
so they always land in [0, 1].

Conventions (fixed so goal indices are well-defined across modules): ray 0
points along +x with angles increasing counter-clockwise in (x, y) array
coordinates; keypoints are ordered row-major from the top-left; a keypoint
lattice of M1 x M2 sits at x = (i+1)/(M1+1), y = (j+1)/(M2+1) in normalized
coordinates. When 4 divides N the direction table is built by exact quadrant
reflection, so quarter-turn symmetries hold bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SKETCH = "SKETCH"
EXPLORATION = "EXPLORATION"

_MARCH_STEP = 0.5           # pixels
_BISECT_ITERS = 60


@dataclass
class RayDescriptorSet:
    matrix: np.ndarray          # (N+2, M): N distances then x, y per column
    m1: int                     # lattice columns (x)
    m2: int                     # lattice rows (y)
    n_rays: int
    source: str                 # SKETCH or EXPLORATION

    @property
    def m(self) -> int:
        return self.m1 * self.m2

    @property
    def distances(self) -> np.ndarray:
        return self.matrix[:self.n_rays]

    @property
    def coords(self) -> np.ndarray:
        """(M, 2) keypoint coordinates in [0, 1]^2."""
        return self.matrix[self.n_rays:].T

    def keypoint_rows(self) -> np.ndarray:
        """(M, N+2) view with one keypoint per row (attention token layout)."""
        return self.matrix.T


def lattice_coords(m1: int, m2: int) -> np.ndarray:
    """Normalized interior-lattice keypoint coordinates, row-major from top-left."""
    xs = (np.arange(m1) + 1.0) / (m1 + 1)
    ys = (np.arange(m2) + 1.0) / (m2 + 1)
    gx, gy = np.meshgrid(xs, ys)            # row-major: y outer, x inner
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def ray_directions(n: int) -> np.ndarray:
    """Unit directions at angles 2*pi*j/n; exact quadrant symmetry when 4 | n."""
    if n % 4 == 0:
        q = n // 4
        base = np.array([[math.cos(2 * math.pi * j / n),
                          math.sin(2 * math.pi * j / n)] for j in range(q)])
        rot90 = np.stack([-base[:, 1], base[:, 0]], axis=1)
        rot180 = -base
        rot270 = np.stack([base[:, 1], -base[:, 0]], axis=1)
        return np.concatenate([base, rot90, rot180, rot270], axis=0)
    ang = 2 * math.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


class _RayTable:
    """Precomputed sampling geometry for one (raster shape, lattice, fan) combo.

    Sample pixel indices are flattened; samples past a ray's border exit
    point to a sentinel slot appended behind the raster, which is never
    inked, so no separate validity mask is carried at lookup time.
    """

    def __init__(self, w: int, h: int, m1: int, m2: int, n: int):
        self.w, self.h = w, h
        self.diag = math.hypot(w, h)
        self.dirs = ray_directions(n)                     # (N, 2)
        coords = lattice_coords(m1, m2)
        self.kp_px = coords * np.array([w, h])            # (M, 2)
        m = m1 * m2
        # exact distance to the raster border per (keypoint, ray)
        kx = self.kp_px[:, 0][:, None]
        ky = self.kp_px[:, 1][:, None]
        dx = self.dirs[:, 0][None, :]
        dy = self.dirs[:, 1][None, :]
        with np.errstate(divide="ignore"):
            tx = np.where(dx > 0, (w - kx) / dx, np.where(dx < 0, -kx / dx, np.inf))
            ty = np.where(dy > 0, (h - ky) / dy, np.where(dy < 0, -ky / dy, np.inf))
        self.border = np.minimum(tx, ty)                  # (M, N)
        k_max = int(math.ceil(self.diag / _MARCH_STEP)) + 1
        t = np.arange(k_max) * _MARCH_STEP                # (K,)
        px = kx[..., None] + t[None, None, :] * dx[..., None]   # (M, N, K)
        py = ky[..., None] + t[None, None, :] * dy[..., None]
        valid = t[None, None, :] <= self.border[..., None]
        ix = np.clip(np.floor(px).astype(np.int64), 0, w - 1)
        iy = np.clip(np.floor(py).astype(np.int64), 0, h - 1)
        flat = iy * w + ix
        flat[~valid] = w * h                              # sentinel, never inked
        self.flat_idx = flat.reshape(m * n, k_max).astype(np.int32)
        self.t = t
        self.k_max = k_max


_TABLE_CACHE: dict[tuple[int, int, int, int, int], _RayTable] = {}


def _table(w: int, h: int, m1: int, m2: int, n: int) -> _RayTable:
    key = (w, h, m1, m2, n)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = _RayTable(w, h, m1, m2, n)
    return _TABLE_CACHE[key]


def extract(raster: np.ndarray, m1: int, m2: int, n_rays: int,
            ink_threshold: int = 128, source: str = SKETCH) -> RayDescriptorSet:
    """Descriptor set of a single raster."""
    return extract_batch(raster[None, ...], m1, m2, n_rays, ink_threshold, source)[0]


def extract_batch(rasters: np.ndarray, m1: int, m2: int, n_rays: int,
                  ink_threshold: int = 128,
                  source: str = SKETCH) -> list[RayDescriptorSet]:
    """Descriptors for a stack of rasters (B, H, W) in one vectorized pass."""
    if m1 < 2 or m2 < 2:
        raise ValueError("lattice dims must be at least 2")
    if n_rays < 4:
        raise ValueError("need at least 4 rays")
    b, h, w = rasters.shape
    if h == 0 or w == 0:
        raise ValueError("raster is empty")
    tab = _table(w, h, m1, m2, n_rays)
    m = m1 * m2
    rays = m * n_rays
    ink = np.empty((b, h * w + 1), dtype=bool)            # sentinel slot at the end
    ink[:, :-1] = rasters.reshape(b, h * w) >= ink_threshold
    ink[:, -1] = False

    # chunked march with early exit: most rays on exploration rasters hit ink
    # within a few chunks, so later samples are never gathered for them
    first = np.zeros((b, rays), dtype=np.int64)
    has_hit = np.zeros((b, rays), dtype=bool)
    chunk = 32
    for k0 in range(0, tab.k_max, chunk):
        open_rows = ~has_hit
        if not open_rows.any():
            break
        bi, ri = np.nonzero(open_rows)
        idx = tab.flat_idx[ri, k0:k0 + chunk]
        sampled = ink[bi[:, None], idx]                   # (open, chunk)
        any_hit = sampled.any(axis=1)
        if any_hit.any():
            sub = np.nonzero(any_hit)[0]
            k_local = np.argmax(sampled[sub], axis=1)
            first[bi[sub], ri[sub]] = k0 + k_local
            has_hit[bi[sub], ri[sub]] = True

    border = np.broadcast_to(tab.border.reshape(1, rays), (b, rays))
    dist = np.minimum(border, tab.diag).copy()

    hit_b, hit_r = np.nonzero(has_hit)
    if len(hit_b):
        k_first = first[hit_b, hit_r]
        t_hi = tab.t[k_first]
        t_lo = np.where(k_first > 0, t_hi - _MARCH_STEP, 0.0)
        kp = tab.kp_px[hit_r // n_rays]
        dirs = tab.dirs[hit_r % n_rays]
        ink_flat = ink[:, :-1].reshape(-1)
        base = hit_b * (h * w)
        zero_hit = k_first == 0
        lo, hi = t_lo.copy(), t_hi.copy()
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            mix = np.clip(np.floor(kp[:, 0] + mid * dirs[:, 0]).astype(np.int64),
                          0, w - 1)
            miy = np.clip(np.floor(kp[:, 1] + mid * dirs[:, 1]).astype(np.int64),
                          0, h - 1)
            inked = ink_flat[base + miy * w + mix]
            hi = np.where(inked, mid, hi)
            lo = np.where(inked, lo, mid)
        dist[hit_b, hit_r] = np.where(zero_hit, 0.0, hi)

    dist = np.clip(dist / tab.diag, 0.0, 1.0).reshape(b, m, n_rays)
    coords = lattice_coords(m1, m2)
    out = []
    for i in range(b):
        matrix = np.concatenate([dist[i].T, coords.T], axis=0)   # (N+2, M)
        out.append(RayDescriptorSet(matrix=matrix, m1=m1, m2=m2,
                                    n_rays=n_rays, source=source))
    return out


def rotate_rays(desc: RayDescriptorSet, k: int) -> RayDescriptorSet:
    """Cyclically shift each keypoint's distance fan by k ray positions.

    Output ray j holds input ray (j - k) mod N, i.e. the fan rotated
    counter-clockwise by k steps; coordinates are untouched. k is taken
    modulo N, so k = 0 and k = N are both the identity.
    """
    n = desc.n_rays
    k = k % n
    matrix = desc.matrix.copy()
    matrix[:n] = np.roll(desc.matrix[:n], k, axis=0)
    return RayDescriptorSet(matrix=matrix, m1=desc.m1, m2=desc.m2,
                            n_rays=n, source=desc.source)


def dump_text(desc: RayDescriptorSet) -> str:
    """Debug dump: one line per keypoint, d_1 .. d_N x y."""
    lines = [f"RAYDESC {desc.m1} {desc.m2} {desc.n_rays} {desc.source}"]
    rows = desc.keypoint_rows()
    for i in range(desc.m):
        lines.append(" ".join(f"{v:.9f}" for v in rows[i]))
    return "\n".join(lines) + "\n"
