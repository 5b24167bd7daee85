"""Deterministic 2-D occupancy-grid world.

Coordinates: x runs along columns, y along rows (downward), in meters. Cell
(r, c) covers [c*res, (c+1)*res) x [r*res, (r+1)*res); the cell containing a
point is found by floor division. Headings are radians in [0, 2pi) with the
direction vector (cos h, sin h); with y pointing down, TURN_LEFT (viewer
counter-clockwise) decreases the heading.

Raycasting walks the cell lattice with an Amanatides-Woo traversal and
returns exact entry distances into the first occupied cell. Exact corner
crossings step diagonally, so cells the ray only touches at a point are not
treated as hit, matching a slab-intersection oracle.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

SQRT2 = math.sqrt(2.0)
TWO_PI = 2.0 * math.pi


class InvalidStateError(Exception):
    """The simulator reached a state that should be impossible (a bug)."""


class Action(IntEnum):
    STOP = 0
    MOVE_FORWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3


@dataclass(frozen=True)
class ActionConfig:
    forward_step: float = 0.25      # meters
    turn_angle: float = math.pi / 6

    def __post_init__(self):
        if self.forward_step <= 0:
            raise ValueError("forward_step must be positive")
        if not (0 < self.turn_angle < math.pi):
            raise ValueError("turn_angle must be in (0, pi)")


@dataclass(frozen=True)
class SensorConfig:
    n_rays: int = 64
    fov: float = math.pi / 2
    max_range: float = 5.0          # meters


class OccupancyGrid:
    """Binary metric map; the border is forced occupied so the world is closed."""

    def __init__(self, cells: np.ndarray, resolution: float):
        cells = np.asarray(cells, dtype=bool)
        if cells.ndim != 2:
            raise ValueError("cells must be 2-D (rows, cols)")
        h, w = cells.shape
        if w < 8 or h < 8:
            raise ValueError(f"grid too small: {w}x{h}, need at least 8x8")
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if not (cells[0, :].all() and cells[-1, :].all()
                and cells[:, 0].all() and cells[:, -1].all()):
            raise ValueError("border cells must be occupied")
        self.cells = cells
        self.resolution = float(resolution)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def in_bounds(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free_point(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return False
        r, c = self.cell_of(x, y)
        return not self.cells[r, c]

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return (c + 0.5) * self.resolution, (r + 0.5) * self.resolution

    def free_fraction_interior(self) -> float:
        interior = ~self.cells[1:-1, 1:-1]
        return float(interior.mean())

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cells.copy(), self.resolution)

    def __eq__(self, other) -> bool:
        return (isinstance(other, OccupancyGrid)
                and self.resolution == other.resolution
                and np.array_equal(self.cells, other.cells))

    # -- text format: OCCGRID header + '#'/'.' rows, row 0 on top ------------
    def to_text(self) -> str:
        lines = [f"OCCGRID {self.width} {self.height} {self.resolution!r}"]
        for r in range(self.height):
            lines.append("".join("#" if v else "." for v in self.cells[r]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OccupancyGrid":
        lines = text.splitlines()
        head = lines[0].split()
        if len(head) != 4 or head[0] != "OCCGRID":
            raise ValueError(f"bad grid header: {lines[0]!r}")
        w, h, res = int(head[1]), int(head[2]), float(head[3])
        rows = []
        for r in range(h):
            row = lines[1 + r]
            if len(row) != w:
                raise ValueError(f"grid row {r} has length {len(row)}, expected {w}")
            rows.append([ch == "#" for ch in row])
        return cls(np.array(rows, dtype=bool), res)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "OccupancyGrid":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading: float  # radians in [0, 2pi)

    def direction(self) -> tuple[float, float]:
        return math.cos(self.heading), math.sin(self.heading)


def wrap_angle(h: float) -> float:
    h = h - TWO_PI * math.floor(h / TWO_PI)
    return 0.0 if h >= TWO_PI else h


def validate_pose(grid: OccupancyGrid, pose: AgentPose) -> None:
    if not grid.in_bounds(pose.x, pose.y):
        raise InvalidStateError(f"pose ({pose.x}, {pose.y}) outside grid")
    r, c = grid.cell_of(pose.x, pose.y)
    if grid.cells[r, c]:
        raise InvalidStateError(f"pose ({pose.x}, {pose.y}) inside occupied cell {(r, c)}")


@dataclass
class DepthObservation:
    rays: np.ndarray     # range readings, meters
    fov: float
    max_range: float


@dataclass
class EpisodeSpec:
    grid: OccupancyGrid
    start: AgentPose
    goal: tuple[float, float]       # meters
    success_radius: float = 1.0
    max_steps: int = 500
    sketch_path: str = ""
    actions: ActionConfig = field(default_factory=ActionConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)

    def validate(self) -> None:
        validate_pose(self.grid, self.start)
        if not self.grid.is_free_point(*self.goal):
            raise ValueError(f"goal {self.goal} is not on a free cell")
        d = geodesic_distance(self.grid, (self.start.x, self.start.y), self.goal)
        if not (self.success_radius < d < math.inf):
            raise ValueError(f"start-goal geodesic {d} must be finite and "
                             f"exceed the success radius {self.success_radius}")


@dataclass
class StepEvents:
    collision: bool = False
    stopped: bool = False
    success: bool = False


# -- raycasting ----------------------------------------------------------------

def cast_rays(cells: np.ndarray, x: float, y: float, angles: np.ndarray,
              max_range_cells: float, collect_cells: bool = False):
    """Exact first-hit distances (cell units) for rays from one origin.

    Returns distances clipped to max_range_cells; when collect_cells is set,
    also a list of (ray_index, row, col) int arrays of free cells traversed
    strictly before each ray's hit (or up to the range clip).
    """
    stacked = cells[None, ...]
    gidx = np.zeros(len(angles), dtype=np.intp)
    return cast_rays_batched(stacked, gidx,
                             np.full(len(angles), x), np.full(len(angles), y),
                             angles, max_range_cells, collect_cells)


def cast_rays_batched(cells_stack: np.ndarray, grid_idx: np.ndarray,
                      xs: np.ndarray, ys: np.ndarray, angles: np.ndarray,
                      max_range_cells: float, collect_cells: bool = False):
    """Vectorized Amanatides-Woo traversal for many rays over stacked grids.

    All inputs are in cell units. Exact tmax ties advance both axes at once
    (diagonal step), so point-touched corner cells are skipped.
    """
    n = len(angles)
    h, w = cells_stack.shape[1], cells_stack.shape[2]
    dx = np.cos(angles)
    dy = np.sin(angles)
    ix = np.floor(xs).astype(np.intp)
    iy = np.floor(ys).astype(np.intp)
    step_x = np.where(dx > 0, 1, -1).astype(np.intp)
    step_y = np.where(dy > 0, 1, -1).astype(np.intp)
    with np.errstate(divide="ignore"):
        tdx = np.abs(1.0 / dx)
        tdy = np.abs(1.0 / dy)
    next_x = np.where(dx > 0, ix + 1.0, ix)
    next_y = np.where(dy > 0, iy + 1.0, iy)
    with np.errstate(divide="ignore", invalid="ignore"):
        tmax_x = np.where(dx != 0, (next_x - xs) / dx, np.inf)
        tmax_y = np.where(dy != 0, (next_y - ys) / dy, np.inf)
    dist = np.full(n, max_range_cells)
    active = np.ones(n, dtype=bool)
    visited: list[np.ndarray] | None = [] if collect_cells else None
    ray_ids = np.arange(n, dtype=np.intp)

    start_occ = cells_stack[grid_idx, iy, ix]
    if start_occ.any():
        raise InvalidStateError("ray origin inside an occupied cell")

    while active.any():
        a = np.nonzero(active)[0]
        txa, tya = tmax_x[a], tmax_y[a]
        go_x = txa < tya
        go_y = tya < txa
        go_both = txa == tya
        t = np.where(go_x, txa, tya)
        adv_x = go_x | go_both
        adv_y = go_y | go_both
        ix[a] += step_x[a] * adv_x
        iy[a] += step_y[a] * adv_y
        tmax_x[a] = np.where(adv_x, txa + tdx[a], txa)
        tmax_y[a] = np.where(adv_y, tya + tdy[a], tya)
        beyond = t >= max_range_cells
        inb = (ix[a] >= 0) & (ix[a] < w) & (iy[a] >= 0) & (iy[a] < h)
        occ = np.zeros(len(a), dtype=bool)
        ok = np.nonzero(inb & ~beyond)[0]
        occ[ok] = cells_stack[grid_idx[a[ok]], iy[a[ok]], ix[a[ok]]]
        hit = occ & ~beyond
        dist[a[hit]] = t[hit]
        if visited is not None:
            keep = np.nonzero(~hit & ~beyond & inb)[0]
            if len(keep):
                visited.append(np.stack([ray_ids[a[keep]], iy[a[keep]], ix[a[keep]]], axis=1))
        active[a[hit | beyond | ~inb]] = False
    if collect_cells:
        table = (np.concatenate(visited, axis=0) if visited
                 else np.empty((0, 3), dtype=np.intp))
        return dist, table
    return dist


def ray_angles(heading: float, n_rays: int, fov: float) -> np.ndarray:
    if n_rays == 1:
        return np.array([heading])
    j = np.arange(n_rays)
    return heading + fov * (j / (n_rays - 1) - 0.5)


def render_depth(grid: OccupancyGrid, pose: AgentPose, n_rays: int = 64,
                 fov: float = math.pi / 2, max_range: float = 5.0) -> DepthObservation:
    """Egocentric depth fan: exact distance to the first occupied-cell boundary."""
    if n_rays < 3:
        raise ValueError("n_rays must be at least 3")
    validate_pose(grid, pose)
    res = grid.resolution
    angles = ray_angles(pose.heading, n_rays, fov)
    d = cast_rays(grid.cells, pose.x / res, pose.y / res, angles, max_range / res)
    return DepthObservation(rays=d * res, fov=fov, max_range=max_range)


# -- geodesics -------------------------------------------------------------------

_MOVES = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
          (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2)]


def distance_field(grid: OccupancyGrid, source: tuple[int, int]) -> np.ndarray:
    """Dijkstra over free cells from a source cell, 8-connected.

    Diagonal moves cost sqrt(2)*resolution and require both orthogonal
    neighbours free (a point agent cannot squeeze through touching corners).
    Returns meters, inf where unreachable.
    """
    cells = grid.cells
    h, w = cells.shape
    dist = np.full((h, w), np.inf)
    sr, sc = source
    if cells[sr, sc]:
        return dist
    dist[sr, sc] = 0.0
    pq: list[tuple[float, int, int]] = [(0.0, sr, sc)]
    while pq:
        d, r, c = heapq.heappop(pq)
        if d > dist[r, c]:
            continue
        for dr, dc, cost in _MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or cells[nr, nc]:
                continue
            if dr != 0 and dc != 0 and (cells[r + dr, c] or cells[r, c + dc]):
                continue
            nd = d + cost
            if nd < dist[nr, nc] - 1e-12:
                dist[nr, nc] = nd
                heapq.heappush(pq, (nd, nr, nc))
    return dist * grid.resolution


def geodesic_distance(grid: OccupancyGrid, a: tuple[float, float],
                      b: tuple[float, float]) -> float:
    """Shortest 8-connected path length between the cells containing a and b."""
    if not (grid.in_bounds(*a) and grid.in_bounds(*b)):
        raise ValueError("geodesic endpoints must lie inside the grid")
    ca, cb = grid.cell_of(*a), grid.cell_of(*b)
    if ca == cb:
        return 0.0
    return float(distance_field(grid, ca)[cb])


# -- stepping ----------------------------------------------------------------------

def step(spec: EpisodeSpec, pose: AgentPose, action: Action,
         step_index: int) -> tuple[AgentPose, DepthObservation, bool, StepEvents]:
    """Advance one action; returns (new pose, depth at new pose, done, events)."""
    if step_index >= spec.max_steps:
        raise ValueError(f"step_index {step_index} beyond max_steps {spec.max_steps}")
    validate_pose(spec.grid, pose)
    events = StepEvents()
    act = spec.actions
    new_pose = pose
    done = False

    if action == Action.TURN_LEFT:
        new_pose = AgentPose(pose.x, pose.y, wrap_angle(pose.heading - act.turn_angle))
    elif action == Action.TURN_RIGHT:
        new_pose = AgentPose(pose.x, pose.y, wrap_angle(pose.heading + act.turn_angle))
    elif action == Action.MOVE_FORWARD:
        res = spec.grid.resolution
        hit = cast_rays(spec.grid.cells, pose.x / res, pose.y / res,
                        np.array([pose.heading]), (act.forward_step + res) / res)[0] * res
        if hit <= act.forward_step:
            events.collision = True
        else:
            dx, dy = pose.direction()
            candidate = AgentPose(pose.x + act.forward_step * dx,
                                  pose.y + act.forward_step * dy, pose.heading)
            # rounding guard: a hit within one ulp of the step length may pass
            # the ray test yet land exactly on the wall boundary
            if spec.grid.is_free_point(candidate.x, candidate.y):
                new_pose = candidate
            else:
                events.collision = True
    elif action == Action.STOP:
        events.stopped = True
        done = True
        d = math.hypot(pose.x - spec.goal[0], pose.y - spec.goal[1])
        events.success = d <= spec.success_radius
    else:
        raise ValueError(f"unknown action {action!r}")

    if step_index + 1 >= spec.max_steps:
        done = True
    validate_pose(spec.grid, new_pose)
    obs = render_depth(spec.grid, new_pose, spec.sensor.n_rays,
                       spec.sensor.fov, spec.sensor.max_range)
    return new_pose, obs, done, events


# -- episode spec text block ---------------------------------------------------------

def episode_to_text(spec: EpisodeSpec) -> str:
    lines = [
        f"start_x {spec.start.x!r}",
        f"start_y {spec.start.y!r}",
        f"start_heading {spec.start.heading!r}",
        f"goal_x {spec.goal[0]!r}",
        f"goal_y {spec.goal[1]!r}",
        f"success_radius {spec.success_radius!r}",
        f"max_steps {spec.max_steps}",
        f"sketch_path {spec.sketch_path}",
    ]
    return "\n".join(lines) + "\n"


def episode_from_text(text: str, grid: OccupancyGrid,
                      actions: ActionConfig | None = None,
                      sensor: SensorConfig | None = None) -> EpisodeSpec:
    kv: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        kv[key] = value.strip()
    return EpisodeSpec(
        grid=grid,
        start=AgentPose(float(kv["start_x"]), float(kv["start_y"]),
                        float(kv["start_heading"])),
        goal=(float(kv["goal_x"]), float(kv["goal_y"])),
        success_radius=float(kv["success_radius"]),
        max_steps=int(kv["max_steps"]),
        sketch_path=kv.get("sketch_path", ""),
        actions=actions or ActionConfig(),
        sensor=sensor or SensorConfig(),
    )
