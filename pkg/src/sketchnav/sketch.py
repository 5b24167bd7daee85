"""Sketch rendering: abstracted hand-drawn-style rasters of a layout.

Two styles share the contour front end. The low-abstraction style keeps
polygonal fidelity: boundary loops of the obstacle regions are simplified
with Douglas-Peucker and drawn as thin strokes. The high-abstraction style
redraws the simplified loops as chains of cubic Bezier strokes whose count
grows with the contour's turning complexity, applies a smooth seeded wobble,
drops small loops entirely and leaves small pen-lift gaps between strokes,
which keeps its ink strictly below the low style's on the same layout.

Start/goal markers are carried as sidecar metadata coordinates, never ink.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .worldgen import LayoutMap, TrajectorySample

RASTER_SIZE = 128
RASTER_PAD = 5
INK = 255

LOW = "LOW"
HIGH = "HIGH"


@dataclass
class SketchMap:
    pixels: np.ndarray              # (H, W) uint8, 0 = blank
    scale: float                    # meters per pixel
    start_marker: tuple[float, float]   # pixel coords (x, y)
    goal_marker: tuple[float, float]
    abstraction: str                # LOW or HIGH

    def ink_fraction(self) -> float:
        return float((self.pixels >= 128).mean())

    def validate(self) -> None:
        h, w = self.pixels.shape
        for name, (mx, my) in (("start", self.start_marker), ("goal", self.goal_marker)):
            if not (0 <= mx < w and 0 <= my < h):
                raise ValueError(f"{name} marker {mx, my} outside raster")
            if self.pixels[int(my), int(mx)] >= 128:
                raise ValueError(f"{name} marker sits on an ink pixel")
        frac = self.ink_fraction()
        if not (0.005 < frac < 0.40):
            raise ValueError(f"ink fraction {frac:.4f} outside (0.5%, 40%)")
        if self.abstraction not in (LOW, HIGH):
            raise ValueError(f"bad abstraction tag {self.abstraction!r}")


@dataclass(frozen=True)
class SketchTransform:
    """Uniform, axis-aligned map from layout cells to sketch pixels."""
    px_per_cell: float
    off_x: float
    off_y: float
    meters_per_px: float

    def cells_to_px(self, x_cells: float, y_cells: float) -> tuple[float, float]:
        return (x_cells * self.px_per_cell + self.off_x,
                y_cells * self.px_per_cell + self.off_y)


def fit_transform(layout: LayoutMap, size: int = RASTER_SIZE,
                  pad: int = RASTER_PAD) -> SketchTransform:
    h, w = layout.grid.cells.shape
    s = (size - 2 * pad) / max(w, h)
    off_x = (size - w * s) / 2
    off_y = (size - h * s) / 2
    return SketchTransform(px_per_cell=s, off_x=off_x, off_y=off_y,
                           meters_per_px=layout.grid.resolution / s)


# -- contours -----------------------------------------------------------------------

_EDGE_DIRS = {  # obstacle side relative to the free cell -> oriented corner edge
    "N": lambda r, c: ((c + 1, r), (c, r)),
    "S": lambda r, c: ((c, r + 1), (c + 1, r + 1)),
    "W": lambda r, c: ((c, r), (c, r + 1)),
    "E": lambda r, c: ((c + 1, r + 1), (c + 1, r)),
}


def boundary_loops(cells: np.ndarray) -> list[list[tuple[float, float]]]:
    """Closed boundary polylines between free and occupied cells.

    Vertices are cell-corner lattice points (x, y); each loop keeps free
    space on its left. Collinear runs are collapsed so the vertex set is the
    loop's corner set.
    """
    h, w = cells.shape
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def occupied(r: int, c: int) -> bool:
        if not (0 <= r < h and 0 <= c < w):
            return True
        return bool(cells[r, c])

    for r in range(h):
        for c in range(w):
            if cells[r, c]:
                continue
            for side, (dr, dc) in (("N", (-1, 0)), ("S", (1, 0)),
                                   ("W", (0, -1)), ("E", (0, 1))):
                if occupied(r + dr, c + dc):
                    a, b = _EDGE_DIRS[side](r, c)
                    edges.setdefault(a, []).append(b)

    loops: list[list[tuple[float, float]]] = []
    while edges:
        start = min(edges.keys())
        prev = None
        cur = start
        loop = [cur]
        while True:
            outs = edges[cur]
            if prev is None or len(outs) == 1:
                nxt = outs.pop(0)
            else:
                # junction corner: prefer the sharpest left turn so loops
                # stay simple (free space remains on the left)
                din = (cur[0] - prev[0], cur[1] - prev[1])
                left = (din[1], -din[0])
                def rank(candidate):
                    d = (candidate[0] - cur[0], candidate[1] - cur[1])
                    if d == left:
                        return 0
                    if d == din:
                        return 1
                    return 2
                outs.sort(key=rank)
                nxt = outs.pop(0)
            if not edges[cur]:
                del edges[cur]
            if nxt == start:
                break
            loop.append(nxt)
            prev, cur = cur, nxt
        loops.append(_collapse_collinear(loop))
    return loops


def _collapse_collinear(loop: list[tuple[int, int]]) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    n = len(loop)
    for i in range(n):
        a, b, c = loop[i - 1], loop[i], loop[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross != 0:
            out.append((float(b[0]), float(b[1])))
    return out


# -- Douglas-Peucker ------------------------------------------------------------------

def _point_segment_distance(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    if den == 0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / den))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def douglas_peucker(points: list[tuple[float, float]],
                    epsilon: float) -> list[tuple[float, float]]:
    """Classic recursive simplification of an open polyline; endpoints kept."""
    if len(points) < 3:
        return list(points)
    a, b = points[0], points[-1]
    dmax, idx = -1.0, -1
    for i in range(1, len(points) - 1):
        d = _point_segment_distance(points[i], a, b)
        if d > dmax:
            dmax, idx = d, i
    if dmax > epsilon:
        left = douglas_peucker(points[:idx + 1], epsilon)
        right = douglas_peucker(points[idx:], epsilon)
        return left[:-1] + right
    return [a, b]


def simplify_loop(loop: list[tuple[float, float]],
                  epsilon: float) -> list[tuple[float, float]]:
    """Closed-loop simplification: split at the two farthest-apart vertices,
    simplify each half, and rejoin."""
    if len(loop) <= 4 or epsilon <= 0:
        return list(loop)
    i_best, j_best, dmax = 0, 0, -1.0
    for i in range(len(loop)):
        for j in range(i + 1, len(loop)):
            d = (loop[i][0] - loop[j][0]) ** 2 + (loop[i][1] - loop[j][1]) ** 2
            if d > dmax:
                dmax, i_best, j_best = d, i, j
    half1 = loop[i_best:j_best + 1]
    half2 = loop[j_best:] + loop[:i_best + 1]
    s1 = douglas_peucker(half1, epsilon)
    s2 = douglas_peucker(half2, epsilon)
    return s1[:-1] + s2[:-1]


# -- rasterization ------------------------------------------------------------------------

def draw_segment(raster: np.ndarray, a: tuple[float, float],
                 b: tuple[float, float], value: int = INK) -> None:
    """Bresenham line from a to b in pixel coords (drawn at pixel centers)."""
    h, w = raster.shape
    x0, y0 = int(round(a[0])), int(round(a[1]))
    x1, y1 = int(round(b[0])), int(round(b[1]))
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    while True:
        if 0 <= y0 < h and 0 <= x0 < w:
            raster[y0, x0] = value
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x0 += sx
        if e2 < dx:
            err += dx
            y0 += sy


def draw_loop(raster: np.ndarray, pts: list[tuple[float, float]]) -> None:
    for i in range(len(pts)):
        draw_segment(raster, pts[i], pts[(i + 1) % len(pts)])


def _nudge_off_ink(raster: np.ndarray, x: float, y: float) -> tuple[float, float]:
    """Move a marker to the nearest blank pixel center if it sits on ink."""
    h, w = raster.shape
    ix, iy = int(x), int(y)
    if raster[iy, ix] < 128:
        return x, y
    best = None
    for radius in range(1, max(h, w)):
        found = []
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                if max(abs(dx), abs(dy)) != radius:
                    continue
                nx, ny = ix + dx, iy + dy
                if 0 <= nx < w and 0 <= ny < h and raster[ny, nx] < 128:
                    found.append((dx * dx + dy * dy, ny, nx))
        if found:
            _, ny, nx = min(found)
            best = (nx + 0.5, ny + 0.5)
            break
    if best is None:
        raise ValueError("no blank pixel available for a marker")
    return best


# -- low abstraction --------------------------------------------------------------------

def render_sketch_low(layout: LayoutMap, traj: TrajectorySample,
                      epsilon: float = 1.5, size: int = RASTER_SIZE) -> SketchMap:
    """Polygon-faithful style: simplified boundary contours as thin strokes."""
    tf = fit_transform(layout, size)
    raster = np.zeros((size, size), dtype=np.uint8)
    for loop in boundary_loops(layout.grid.cells):
        pts = [tf.cells_to_px(x, y) for x, y in loop]
        pts = simplify_loop(pts, epsilon)
        draw_loop(raster, pts)
    start_px, goal_px = _marker_pixels(layout, traj, tf, raster)
    sk = SketchMap(pixels=raster, scale=tf.meters_per_px,
                   start_marker=start_px, goal_marker=goal_px, abstraction=LOW)
    sk.validate()
    return sk


def _marker_pixels(layout: LayoutMap, traj: TrajectorySample, tf: SketchTransform,
                   raster: np.ndarray):
    r0, c0 = layout.crop_offset
    sx, sy = traj.start[1] - c0 + 0.5, traj.start[0] - r0 + 0.5
    gx, gy = traj.goal[1] - c0 + 0.5, traj.goal[0] - r0 + 0.5
    start_px = _nudge_off_ink(raster, *tf.cells_to_px(sx, sy))
    goal_px = _nudge_off_ink(raster, *tf.cells_to_px(gx, gy))
    return start_px, goal_px


# -- high abstraction --------------------------------------------------------------------

def _resample_open(pts: np.ndarray, spacing: float) -> np.ndarray:
    """Uniform arc-length resampling of an open polyline (endpoints kept)."""
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = max(3, int(round(total / spacing)) + 1)
    s = np.linspace(0.0, total, n)
    x = np.interp(s, cum, pts[:, 0])
    y = np.interp(s, cum, pts[:, 1])
    return np.stack([x, y], axis=1)


def _turn_at(pts: list[tuple[float, float]], i: int) -> float:
    a, b, c = pts[i - 1], pts[i], pts[(i + 1) % len(pts)]
    v1 = (b[0] - a[0], b[1] - a[1])
    v2 = (c[0] - b[0], c[1] - b[1])
    n1, n2 = math.hypot(*v1), math.hypot(*v2)
    if n1 == 0 or n2 == 0:
        return 0.0
    dot = max(-1.0, min(1.0, (v1[0] * v2[0] + v1[1] * v2[1]) / (n1 * n2)))
    return abs(math.acos(dot))


def _corner_runs(verts: list[tuple[float, float]],
                 corner_threshold: float = math.pi / 5) -> list[np.ndarray]:
    """Split a closed vertex loop into open runs that end at sharp corners."""
    n = len(verts)
    sharp = [i for i in range(n) if _turn_at(verts, i) > corner_threshold]
    if not sharp:
        return [np.asarray(verts + [verts[0]], dtype=float)]
    runs = []
    for k in range(len(sharp)):
        i0, i1 = sharp[k], sharp[(k + 1) % len(sharp)]
        chain = [verts[i0]]
        j = i0
        while j != i1:
            j = (j + 1) % n
            chain.append(verts[j])
        runs.append(np.asarray(chain, dtype=float))
    return runs


def _turning_complexity(pts: list[tuple[float, float]]) -> float:
    """Total absolute turning angle (radians) around a closed polygon."""
    total = 0.0
    n = len(pts)
    for i in range(n):
        a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
        v1 = (b[0] - a[0], b[1] - a[1])
        v2 = (c[0] - b[0], c[1] - b[1])
        n1, n2 = math.hypot(*v1), math.hypot(*v2)
        if n1 == 0 or n2 == 0:
            continue
        dot = max(-1.0, min(1.0, (v1[0] * v2[0] + v1[1] * v2[1]) / (n1 * n2)))
        total += abs(math.acos(dot))
    return total


def _fit_cubic(points: np.ndarray) -> np.ndarray:
    """Least-squares cubic Bezier through ordered points, endpoints pinned."""
    p0, p3 = points[0], points[-1]
    if len(points) <= 2:
        return np.array([p0, p0 * 2 / 3 + p3 / 3, p0 / 3 + p3 * 2 / 3, p3])
    seg = np.hypot(*np.diff(points, axis=0).T)
    t = np.concatenate([[0.0], np.cumsum(seg)])
    t = t / t[-1] if t[-1] > 0 else np.linspace(0, 1, len(points))
    b0 = (1 - t) ** 3
    b1 = 3 * t * (1 - t) ** 2
    b2 = 3 * t * t * (1 - t)
    b3 = t ** 3
    a = np.stack([b1, b2], axis=1)
    rhs = points - np.outer(b0, p0) - np.outer(b3, p3)
    sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return np.array([p0, sol[0], sol[1], p3])


def _bezier_points(ctrl: np.ndarray, n: int = 24, t_end: float = 1.0) -> np.ndarray:
    t = np.linspace(0.0, t_end, n)[:, None]
    p0, p1, p2, p3 = ctrl
    return ((1 - t) ** 3 * p0 + 3 * t * (1 - t) ** 2 * p1
            + 3 * t ** 2 * (1 - t) * p2 + t ** 3 * p3)


def plot_curve(raster: np.ndarray, ctrl: np.ndarray, t_end: float = 1.0,
               value: int = INK, wave: "_JitterWave | None" = None,
               span: tuple[float, float] = (0.0, 1.0)) -> None:
    """Rasterize a cubic Bezier by dense sampling (one pixel per visited cell).

    Sampling at ~3 points per pixel of estimated arc length keeps the trace
    gap-free without the double-pixel thickening that per-segment Bresenham
    produces on wobbly curves. An optional jitter wave displaces the samples;
    span locates this stroke inside its run so the wobble is continuous
    across the run's strokes.
    """
    chord = float(np.hypot(*np.diff(ctrl, axis=0).T).sum())
    n = int(min(400, max(8, 3 * chord)))
    pts = _bezier_points(ctrl, n=n, t_end=t_end)
    if wave is not None:
        s = span[0] + (span[1] - span[0]) * np.linspace(0.0, t_end, n)
        pts = pts + wave.eval(s)
    xs = np.round(pts[:, 0]).astype(int)
    ys = np.round(pts[:, 1]).astype(int)
    h, w = raster.shape
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    raster[ys[ok], xs[ok]] = value


def _loop_runs(loop_px: list[tuple[float, float]], epsilon: float,
               min_loop_px: float, base_budget_px: float,
               min_budget_px: float = 8.0) -> list[tuple[np.ndarray, int]]:
    """(dense run, stroke count) pairs for one boundary loop.

    Runs end at sharp corners; each is subdivided into strokes by a budget
    that shrinks as the loop's total turning grows (wigglier contours get
    more, shorter strokes). Empty when the loop is below the length floor.
    """
    verts = simplify_loop(loop_px, epsilon)
    closed = np.asarray(verts + [verts[0]], dtype=float)
    perimeter = float(np.hypot(*np.diff(closed, axis=0).T).sum())
    if perimeter < min_loop_px:
        return []
    complexity = _turning_complexity(verts)
    budget = max(min_budget_px, base_budget_px / (1.0 + complexity / (2 * math.pi)))
    out = []
    for run in _corner_runs(verts):
        dense = _resample_open(run, spacing=2.0)
        length = float(np.hypot(*np.diff(dense, axis=0).T).sum())
        out.append((dense, max(1, math.ceil(length / budget))))
    return out


def render_sketch_high(layout: LayoutMap, traj: TrajectorySample, seed: int,
                       epsilon: float = 2.0, size: int = RASTER_SIZE,
                       jitter_px: float = 2.0, min_loop_px: float = 12.0,
                       base_budget_px: float = 24.0,
                       gap_fraction: float = 0.10) -> SketchMap:
    """Freehand style: cubic Bezier strokes with seeded wobble.

    Loops shorter than min_loop_px are dropped entirely; the wobble is a
    smooth displacement of at most jitter_px applied along each corner-to-
    corner run; every stroke stops a gap_fraction short of its span (pen
    lifts). Deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    tf = fit_transform(layout, size)
    raster = np.zeros((size, size), dtype=np.uint8)
    for loop in boundary_loops(layout.grid.cells):
        pts = [tf.cells_to_px(x, y) for x, y in loop]
        for dense, n_strokes in _loop_runs(pts, epsilon, min_loop_px, base_budget_px):
            run_len = float(np.hypot(*np.diff(dense, axis=0).T).sum())
            wave = _JitterWave(rng, run_len, jitter_px) if jitter_px > 0 else None
            n_pts = len(dense)
            for chunk in np.array_split(np.arange(n_pts), n_strokes):
                if len(chunk) < 2:
                    continue
                ctrl = _fit_cubic(dense[chunk[0]:chunk[-1] + 1])
                plot_curve(raster, ctrl, t_end=1.0 - gap_fraction,
                           wave=wave, span=(chunk[0] / max(1, n_pts - 1),
                                            chunk[-1] / max(1, n_pts - 1)))
    start_px, goal_px = _marker_pixels(layout, traj, tf, raster)
    sk = SketchMap(pixels=raster, scale=tf.meters_per_px,
                   start_marker=start_px, goal_marker=goal_px, abstraction=HIGH)
    sk.validate()
    return sk


class _JitterWave:
    """Smooth low-frequency displacement field along one contour run.

    Three sine harmonics per axis, scaled so the peak magnitude stays at or
    below the requested amplitude and the spatial slope below 0.2 px/px; the
    drawn strokes are displaced after Bezier fitting, so the wobble can never
    feed back into the fit.
    """

    def __init__(self, rng: np.random.Generator, length_px: float, amplitude: float):
        self.components: list[list[tuple[float, int, float]]] = []
        for _ in range(2):
            comps = [(rng.uniform(0.3, 1.0) / k, k, rng.uniform(0, 2 * math.pi))
                     for k in (1, 2, 3)]
            peak_bound = sum(a for a, _, _ in comps)
            scale = amplitude * rng.uniform(0.5, 1.0) / peak_bound if peak_bound else 0.0
            slope_bound = sum(a * scale * 2 * math.pi * k for a, k, _ in comps) \
                / max(1e-9, length_px)
            if slope_bound > 0.2:
                scale *= 0.2 / slope_bound
            self.components.append([(a * scale, k, phi) for a, k, phi in comps])

    def eval(self, s: np.ndarray) -> np.ndarray:
        out = np.zeros((len(s), 2))
        for axis, comps in enumerate(self.components):
            for a, k, phi in comps:
                out[:, axis] += a * np.sin(2 * math.pi * k * s + phi)
        return out


def count_high_curves(layout: LayoutMap, epsilon: float = 1.5,
                      size: int = RASTER_SIZE, min_loop_px: float = 12.0,
                      base_budget_px: float = 24.0) -> int:
    """Stroke count the high-abstraction renderer uses (for analysis/tests)."""
    tf = fit_transform(layout, size)
    total = 0
    for loop in boundary_loops(layout.grid.cells):
        pts = [tf.cells_to_px(x, y) for x, y in loop]
        total += sum(n for _, n in _loop_runs(pts, epsilon, min_loop_px, base_budget_px))
    return total


# -- PGM + sidecar IO -----------------------------------------------------------------------

def write_pgm(path: str | Path, raster: np.ndarray) -> None:
    h, w = raster.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.astype(np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary PGM file")
    fields: list[bytes] = []
    i = 2
    while len(fields) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        fields.append(data[i:j])
        i = j
    i += 1
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError("only maxval 255 PGM supported")
    return np.frombuffer(data[i:i + w * h], dtype=np.uint8).reshape(h, w).copy()


def save_sketch(path_base: str | Path, sk: SketchMap) -> None:
    """Write <base>.pgm and <base>.pgm.meta."""
    base = Path(path_base)
    write_pgm(base, sk.pixels)
    meta = (f"scale {sk.scale!r}\n"
            f"start_marker {sk.start_marker[0]!r} {sk.start_marker[1]!r}\n"
            f"goal_marker {sk.goal_marker[0]!r} {sk.goal_marker[1]!r}\n"
            f"abstraction {sk.abstraction}\n")
    Path(str(base) + ".meta").write_text(meta)


def load_sketch(path_base: str | Path) -> SketchMap:
    base = Path(path_base)
    pixels = read_pgm(base)
    kv = {}
    for line in Path(str(base) + ".meta").read_text().splitlines():
        parts = line.split()
        if parts:
            kv[parts[0]] = parts[1:]
    return SketchMap(
        pixels=pixels,
        scale=float(kv["scale"][0]),
        start_marker=(float(kv["start_marker"][0]), float(kv["start_marker"][1])),
        goal_marker=(float(kv["goal_marker"][0]), float(kv["goal_marker"][1])),
        abstraction=kv["abstraction"][0],
    )
