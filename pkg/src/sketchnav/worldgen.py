"""Procedural multi-room worlds and the layout-cleaning pipeline.

Worlds are built by binary space partitioning: walls (thick enough to survive
the denoising pass) split the interior into rooms, every split is immediately
pierced by a door so free space stays connected, and small obstacle blobs are
scattered afterwards. The layout pipeline then denoises a grid (morphological
opening of the obstacle set plus largest-component thresholding), cuts free
space into rooms at narrow passages using an exact Euclidean distance
transform, and trims everything not touched by a sampled trajectory.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import SQRT2, OccupancyGrid, distance_field


class DegenerateLayoutError(Exception):
    pass


class GenerationError(Exception):
    pass


@dataclass(frozen=True)
class WorldParams:
    width_range: tuple[int, int] = (56, 72)
    height_range: tuple[int, int] = (56, 72)
    rooms_range: tuple[int, int] = (3, 6)
    wall_thickness: int = 3
    door_width: int = 4
    min_room_side: int = 10
    obstacles_range: tuple[int, int] = (2, 6)
    obstacle_size_range: tuple[int, int] = (1, 2)
    resolution: float = 0.1
    max_attempts: int = 20

    def validate(self) -> None:
        for lo, hi in (self.width_range, self.height_range, self.rooms_range,
                       self.obstacles_range, self.obstacle_size_range):
            if lo > hi or lo < 0:
                raise ValueError("ranges must be non-empty and non-negative")
        if self.width_range[0] < 16 or self.height_range[0] < 16:
            raise ValueError("worlds smaller than 16 cells are not useful")
        if self.wall_thickness < 1 or self.door_width < 1:
            raise ValueError("wall thickness and door width must be positive")


@dataclass
class LayoutMap:
    """A denoised (and possibly trimmed) layout with provenance metadata."""
    grid: OccupancyGrid
    provenance: str = ""
    erosion_radius: int = 1
    crop_offset: tuple[int, int] = (0, 0)   # (row, col) of cell (0,0) in the source grid

    def validate(self) -> None:
        free = ~self.grid.cells
        if free.sum() == 0:
            raise DegenerateLayoutError("layout has no free space")
        labels, count = connected_components(free)
        if count != 1:
            raise DegenerateLayoutError(f"layout has {count} free components, expected 1")
        if self.grid.free_fraction_interior() < 0.20:
            raise DegenerateLayoutError(
                f"free fraction {self.grid.free_fraction_interior():.3f} below 20%")


@dataclass
class TrajectorySample:
    start: tuple[int, int]          # (row, col)
    goal: tuple[int, int]
    path: list[tuple[int, int]]
    regions: set[int] = field(default_factory=set)


# -- connected components (4-connected, matching traversability) -----------------

def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 4-connected components of a boolean mask; -1 outside the mask."""
    h, w = mask.shape
    labels = np.full((h, w), -1, dtype=np.int32)
    count = 0
    for r0 in range(h):
        for c0 in range(w):
            if mask[r0, c0] and labels[r0, c0] < 0:
                stack = [(r0, c0)]
                labels[r0, c0] = count
                while stack:
                    r, c = stack.pop()
                    for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                        if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] \
                                and labels[nr, nc] < 0:
                            labels[nr, nc] = count
                            stack.append((nr, nc))
                count += 1
    return labels, count


def keep_largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = connected_components(mask)
    if count <= 1:
        return mask.copy()
    sizes = np.bincount(labels[labels >= 0].ravel(), minlength=count)
    return labels == int(np.argmax(sizes))


# -- morphology ----------------------------------------------------------------------

def disk_offsets(radius: float) -> list[tuple[int, int]]:
    r = int(math.floor(radius))
    return [(dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1)
            if dr * dr + dc * dc <= radius * radius]


def erode(mask: np.ndarray, radius: float) -> np.ndarray:
    """Morphological erosion with a disk; outside the array counts as True."""
    out = np.ones_like(mask)
    h, w = mask.shape
    for dr, dc in disk_offsets(radius):
        shifted = np.ones_like(mask)
        rs, re = max(0, -dr), h - max(0, dr)
        cs, ce = max(0, -dc), w - max(0, dc)
        shifted[rs:re, cs:ce] = mask[rs + dr:re + dr, cs + dc:ce + dc]
        out &= shifted
    return out


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dr, dc in disk_offsets(radius):
        shifted = np.zeros_like(mask)
        rs, re = max(0, -dr), h - max(0, dr)
        cs, ce = max(0, -dc), w - max(0, dc)
        shifted[rs:re, cs:ce] = mask[rs + dr:re + dr, cs + dc:ce + dc]
        out |= shifted
    return out


def opening(mask: np.ndarray, radius: float) -> np.ndarray:
    return dilate(erode(mask, radius), radius)


# -- exact Euclidean distance transform ----------------------------------------------

def squared_edt(obstacles: np.ndarray) -> np.ndarray:
    """Squared center-to-center distance from every cell to the nearest True cell.

    Two-pass lower-envelope method: exact, no approximation.
    """
    big = 1e18
    h, w = obstacles.shape
    f = np.where(obstacles, 0.0, big)

    def transform_1d(row: np.ndarray) -> np.ndarray:
        n = len(row)
        d = np.empty(n)
        v = np.zeros(n, dtype=np.intp)
        z = np.empty(n + 1)
        k = 0
        v[0] = 0
        z[0], z[1] = -big, big
        for q in range(1, n):
            if row[q] >= big and row[v[k]] >= big:
                continue
            s = ((row[q] + q * q) - (row[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
            while s <= z[k]:
                k -= 1
                s = ((row[q] + q * q) - (row[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = big
        k = 0
        for q in range(n):
            while z[k + 1] < q:
                k += 1
            d[q] = (q - v[k]) ** 2 + row[v[k]]
        return d

    tmp = np.empty_like(f)
    for c in range(w):
        tmp[:, c] = transform_1d(f[:, c])
    out = np.empty_like(f)
    for r in range(h):
        out[r, :] = transform_1d(tmp[r, :])
    return out


# -- world generation ------------------------------------------------------------------

def generate_world(seed: int, params: WorldParams | None = None) -> OccupancyGrid:
    """Multi-room floor layout, deterministic in the seed.

    BSP splits with doors carved through each new wall keep the free space
    connected; scattered obstacle blobs that would disconnect it force a
    bounded retry.
    """
    params = params or WorldParams()
    params.validate()
    rng = np.random.default_rng(seed)
    last_err = None
    for _ in range(params.max_attempts):
        try:
            return _generate_once(rng, params)
        except GenerationError as e:
            last_err = e
    raise GenerationError(f"world generation failed after {params.max_attempts} "
                          f"attempts: {last_err}")


def _generate_once(rng: np.random.Generator, params: WorldParams) -> OccupancyGrid:
    w = int(rng.integers(params.width_range[0], params.width_range[1] + 1))
    h = int(rng.integers(params.height_range[0], params.height_range[1] + 1))
    t = params.wall_thickness
    cells = np.zeros((h, w), dtype=bool)
    cells[:t, :] = cells[-t:, :] = True
    cells[:, :t] = cells[:, -t:] = True

    n_rooms = int(rng.integers(params.rooms_range[0], params.rooms_range[1] + 1))
    regions = [(t, h - t, t, w - t)]   # half-open (r0, r1, c0, c1) of free interior
    while len(regions) < n_rooms:
        # split the largest splittable region
        idx = max(range(len(regions)),
                  key=lambda i: (regions[i][1] - regions[i][0]) * (regions[i][3] - regions[i][2]))
        r0, r1, c0, c1 = regions[idx]
        span_r, span_c = r1 - r0, c1 - c0
        need = 2 * params.min_room_side + t
        vertical = span_c >= span_r            # split the longer axis
        if (span_c if vertical else span_r) < need:
            if max(span_r, span_c) < need:
                break                          # nothing splittable; fewer rooms
            vertical = span_c > span_r
            if (span_c if vertical else span_r) < need:
                break
        if vertical:
            pos = int(rng.integers(c0 + params.min_room_side,
                                   c1 - params.min_room_side - t + 1))
            cells[r0:r1, pos:pos + t] = True
            door = int(rng.integers(r0, r1 - params.door_width + 1))
            cells[door:door + params.door_width, pos:pos + t] = False
            regions[idx] = (r0, r1, c0, pos)
            regions.append((r0, r1, pos + t, c1))
        else:
            pos = int(rng.integers(r0 + params.min_room_side,
                                   r1 - params.min_room_side - t + 1))
            cells[pos:pos + t, c0:c1] = True
            door = int(rng.integers(c0, c1 - params.door_width + 1))
            cells[pos:pos + t, door:door + params.door_width] = False
            regions[idx] = (r0, pos, c0, c1)
            regions.append((pos + t, r1, c0, c1))

    n_obstacles = int(rng.integers(params.obstacles_range[0], params.obstacles_range[1] + 1))
    for _ in range(n_obstacles):
        size = int(rng.integers(params.obstacle_size_range[0],
                                params.obstacle_size_range[1] + 1))
        for _ in range(30):
            r = int(rng.integers(t + 1, h - t - size - 1))
            c = int(rng.integers(t + 1, w - t - size - 1))
            patch = cells[r - 1:r + size + 1, c - 1:c + size + 1]
            if not patch.any():                 # keep blobs clear of walls and doors
                cells[r:r + size, c:c + size] = True
                break

    grid = OccupancyGrid(cells, params.resolution)
    labels, count = connected_components(~cells)
    if count != 1:
        raise GenerationError(f"free space split into {count} components")
    return grid


# -- layout pipeline --------------------------------------------------------------------

def denoise_layout(raw: OccupancyGrid, erosion_radius: int = 1,
                   provenance: str = "") -> LayoutMap:
    """Morphological opening of the obstacle set, then keep only the largest
    free component; the border is re-imposed afterwards."""
    obstacles = opening(raw.cells, erosion_radius)
    obstacles[0, :] = obstacles[-1, :] = obstacles[:, 0] = obstacles[:, -1] = True
    free = keep_largest_component(~obstacles)
    if not free.any():
        raise DegenerateLayoutError("no free space left after opening")
    layout = LayoutMap(grid=OccupancyGrid(~free, raw.resolution),
                       provenance=provenance, erosion_radius=erosion_radius)
    layout.validate()
    return layout


def segment_rooms(layout: LayoutMap, door_threshold: float = 2.0) -> np.ndarray:
    """Partition free cells into rooms by cutting at narrow passages.

    A free cell whose distance-transform value is at most door_threshold is a
    door cell; rooms are 4-connected components of the remaining free cells,
    and door cells join the adjacent room they touch the most (8-neighbour
    contact, smaller label on ties). Door pockets that never touch a room
    become rooms of their own, so every free cell ends up labelled.
    """
    cells = layout.grid.cells
    free = ~cells
    edt = np.sqrt(squared_edt(cells))
    door = free & (edt <= door_threshold)
    core = free & ~door
    labels, count = connected_components(core)
    if count == 0:
        labels, count = connected_components(free)
        return labels
    pending = door.copy()
    while pending.any():
        assigned_any = False
        order = np.argwhere(pending)
        for r, c in order:
            contact = {}
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < labels.shape[0] and 0 <= nc < labels.shape[1] \
                            and labels[nr, nc] >= 0:
                        contact[labels[nr, nc]] = contact.get(labels[nr, nc], 0) + 1
            if contact:
                best = sorted(contact.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
                labels[r, c] = best
                pending[r, c] = False
                assigned_any = True
        if not assigned_any:
            # unreachable door pocket: promote each remaining component to a room
            extra, n_extra = connected_components(pending)
            labels[pending] = extra[pending] + count
            break
    return labels


def select_region(layout: LayoutMap, traj: TrajectorySample,
                  labels: np.ndarray, margin: int = 2) -> LayoutMap:
    """Keep the rooms the trajectory touches whole, discard everything else,
    and crop to the kept area. Path cells always stay free."""
    kept_rooms = {int(labels[r, c]) for r, c in traj.path if labels[r, c] >= 0}
    traj.regions = set(kept_rooms)
    keep = np.isin(labels, sorted(kept_rooms))
    for r, c in traj.path:
        keep[r, c] = True
    cells = ~keep
    rows = np.any(keep, axis=1).nonzero()[0]
    cols = np.any(keep, axis=0).nonzero()[0]
    r0 = max(0, rows[0] - margin)
    r1 = min(cells.shape[0], rows[-1] + margin + 1)
    c0 = max(0, cols[0] - margin)
    c1 = min(cells.shape[1], cols[-1] + margin + 1)
    # pad so the result is a legal grid even for tiny regions
    while r1 - r0 < 8:
        r0, r1 = max(0, r0 - 1), min(cells.shape[0], r1 + 1)
    while c1 - c0 < 8:
        c0, c1 = max(0, c0 - 1), min(cells.shape[1], c1 + 1)
    cropped = cells[r0:r1, c0:c1].copy()
    cropped[0, :] = cropped[-1, :] = cropped[:, 0] = cropped[:, -1] = True
    out = LayoutMap(grid=OccupancyGrid(cropped, layout.grid.resolution),
                    provenance=layout.provenance,
                    erosion_radius=layout.erosion_radius,
                    crop_offset=(int(r0), int(c0)))
    out.validate()
    return out


# -- trajectories ------------------------------------------------------------------------

def astar_path(grid: OccupancyGrid, start: tuple[int, int],
               goal: tuple[int, int]) -> list[tuple[int, int]] | None:
    """Minimal-cost 8-connected path (octile heuristic); None if unreachable.

    Costs and the diagonal corner rule match distance_field exactly.
    """
    cells = grid.cells
    h, w = cells.shape
    if cells[start] or cells[goal]:
        return None

    def heuristic(r: int, c: int) -> float:
        dr, dc = abs(r - goal[0]), abs(c - goal[1])
        return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)

    g_cost = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 0
    pq = [(heuristic(*start), counter, start)]
    closed: set[tuple[int, int]] = set()
    moves = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
             (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2)]
    while pq:
        _, _, node = heapq.heappop(pq)
        if node in closed:
            continue
        if node == goal:
            path = [node]
            while node in parent:
                node = parent[node]
                path.append(node)
            path.reverse()
            return path
        closed.add(node)
        r, c = node
        for dr, dc, cost in moves:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or cells[nr, nc]:
                continue
            if dr != 0 and dc != 0 and (cells[r + dr, c] or cells[r, c + dc]):
                continue
            nd = g_cost[node] + cost
            if nd < g_cost.get((nr, nc), math.inf) - 1e-12:
                g_cost[(nr, nc)] = nd
                parent[(nr, nc)] = node
                counter += 1
                heapq.heappush(pq, (nd + heuristic(nr, nc), counter, (nr, nc)))
    return None


def path_cost(path: list[tuple[int, int]], resolution: float = 1.0) -> float:
    total = 0.0
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        total += SQRT2 if (r0 != r1 and c0 != c1) else 1.0
    return total * resolution


def sample_trajectory(layout: LayoutMap, seed: int, min_geodesic: float,
                      max_attempts: int = 40,
                      clearance_cells: float = 2.0) -> TrajectorySample:
    """Random start/goal pair at least min_geodesic apart, joined by A*.

    Endpoints prefer cells at least clearance_cells from the nearest obstacle
    (the coarse action stride makes wall-hugging goals awkward to reach);
    when no such cell exists the constraint is dropped.
    """
    rng = np.random.default_rng(seed)
    grid = layout.grid
    clear = np.sqrt(squared_edt(grid.cells)) >= clearance_cells
    free = np.argwhere(~grid.cells & clear)
    if len(free) == 0:
        free = np.argwhere(~grid.cells)
    if len(free) == 0:
        raise DegenerateLayoutError("layout has no free cells")
    for _ in range(max_attempts):
        sr, sc = free[rng.integers(len(free))]
        field_m = distance_field(grid, (int(sr), int(sc)))
        eligible = np.isfinite(field_m) & (field_m >= min_geodesic) & clear
        if not eligible.any():
            eligible = np.isfinite(field_m) & (field_m >= min_geodesic)
        ok = np.argwhere(eligible)
        if len(ok) == 0:
            continue
        gr, gc = ok[rng.integers(len(ok))]
        path = astar_path(grid, (int(sr), int(sc)), (int(gr), int(gc)))
        if path is None:
            continue
        return TrajectorySample(start=(int(sr), int(sc)), goal=(int(gr), int(gc)),
                                path=path)
    raise GenerationError(
        f"no start/goal pair with geodesic >= {min_geodesic} m found "
        f"in {max_attempts} attempts")
