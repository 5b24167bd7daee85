"""Online exploration map built from depth observations at known poses.

Three cell states. Integration walks each depth ray over the cell lattice,
marks the cells crossed strictly before the hit FREE and stamps the hit cell
OCCUPIED. OCCUPIED is sticky: once set, later FREE evidence never clears it
(the sensor is noise-free, so a conflict can only come from grazing rays).
Rays that were clipped at max range mark free cells but no endpoint.

The raster view resamples the map into the sketch raster's frame: the known
start pose is anchored onto the sketch's start marker and axes stay aligned,
so the two rasters live in one shared, rotation-free coordinate system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import AgentPose, DepthObservation, OccupancyGrid, ray_angles
from .sketch import SketchMap

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

_STATE_SHADE = {OCCUPIED: 255, UNKNOWN: 128, FREE: 0}


@dataclass
class ExplorationMap:
    states: np.ndarray          # (H, W) uint8 of {UNKNOWN, FREE, OCCUPIED}
    resolution: float           # meters per cell
    origin: tuple[float, float] = (0.0, 0.0)   # world point of cell (0, 0)

    @classmethod
    def blank_like(cls, grid: OccupancyGrid) -> "ExplorationMap":
        return cls(states=np.zeros(grid.cells.shape, dtype=np.uint8),
                   resolution=grid.resolution)

    def known_count(self) -> int:
        return int((self.states != UNKNOWN).sum())

    def copy(self) -> "ExplorationMap":
        return ExplorationMap(self.states.copy(), self.resolution, self.origin)


def integrate(emap: ExplorationMap, pose: AgentPose, obs: DepthObservation) -> ExplorationMap:
    """Fold one depth observation into the map (mutates and returns it)."""
    res = emap.resolution
    n = len(obs.rays)
    angles = ray_angles(pose.heading, n, obs.fov)
    x = (pose.x - emap.origin[0]) / res
    y = (pose.y - emap.origin[1]) / res
    mark_rays(emap.states[None, ...], np.zeros(n, dtype=np.intp),
              np.full(n, x), np.full(n, y), angles,
              np.asarray(obs.rays) / res, obs.max_range / res)
    return emap


def mark_rays(states_stack: np.ndarray, map_idx: np.ndarray,
              xs: np.ndarray, ys: np.ndarray,
              angles: np.ndarray, dists_cells: np.ndarray,
              max_range_cells: float) -> None:
    """Vectorized lattice walk shared by single and batched integration.

    states_stack is (B, H, W); map_idx assigns each ray to its map. All
    coordinates in cell units. dists_cells is the sensor reading per ray; a
    reading >= max_range means the ray was clipped (no occupied endpoint).
    """
    states = states_stack
    h, w = states.shape[1], states.shape[2]
    n = len(angles)
    dx = np.cos(angles)
    dy = np.sin(angles)
    ix = np.floor(xs).astype(np.intp)
    iy = np.floor(ys).astype(np.intp)
    step_x = np.where(dx > 0, 1, -1).astype(np.intp)
    step_y = np.where(dy > 0, 1, -1).astype(np.intp)
    with np.errstate(divide="ignore", invalid="ignore"):
        tdx = np.abs(1.0 / dx)
        tdy = np.abs(1.0 / dy)
        next_x = np.where(dx > 0, ix + 1.0, ix)
        next_y = np.where(dy > 0, iy + 1.0, iy)
        tmax_x = np.where(dx != 0, (next_x - xs) / dx, np.inf)
        tmax_y = np.where(dy != 0, (next_y - ys) / dy, np.inf)

    hit_mask = dists_cells < max_range_cells
    free_map: list[np.ndarray] = []
    free_rows: list[np.ndarray] = []
    free_cols: list[np.ndarray] = []
    inb0 = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    free_map.append(map_idx[inb0].copy())
    free_rows.append(iy[inb0].copy())
    free_cols.append(ix[inb0].copy())

    active = np.ones(n, dtype=bool)
    while active.any():
        a = np.nonzero(active)[0]
        txa, tya = tmax_x[a], tmax_y[a]
        go_x = txa < tya
        go_both = txa == tya
        adv_x = go_x | go_both
        adv_y = ~go_x
        t = np.where(go_x, txa, tya)
        ix[a] += step_x[a] * adv_x
        iy[a] += step_y[a] * adv_y
        tmax_x[a] = np.where(adv_x, txa + tdx[a], txa)
        tmax_y[a] = np.where(adv_y, tya + tdy[a], tya)
        # entry at or past the reading ends the walk; the hit cell is stamped below
        done = t >= dists_cells[a] - 1e-12
        inb = (ix[a] >= 0) & (ix[a] < w) & (iy[a] >= 0) & (iy[a] < h)
        keep = ~done & inb
        if keep.any():
            free_map.append(map_idx[a[keep]].copy())
            free_rows.append(iy[a[keep]].copy())
            free_cols.append(ix[a[keep]].copy())
        active[a[done | ~inb]] = False

    mids = np.concatenate(free_map)
    rows = np.concatenate(free_rows)
    cols = np.concatenate(free_cols)
    sel = states[mids, rows, cols] != OCCUPIED
    states[mids[sel], rows[sel], cols[sel]] = FREE

    hits = np.nonzero(hit_mask)[0]
    if len(hits):
        hx = xs[hits] + (dists_cells[hits] + 1e-9) * dx[hits]
        hy = ys[hits] + (dists_cells[hits] + 1e-9) * dy[hits]
        hix = np.floor(hx).astype(np.intp)
        hiy = np.floor(hy).astype(np.intp)
        ok = (hix >= 0) & (hix < w) & (hiy >= 0) & (hiy < h)
        states[map_idx[hits][ok], hiy[ok], hix[ok]] = OCCUPIED


def raster_transform(sketch: SketchMap, start: AgentPose) -> tuple[float, float, float]:
    """(meters_per_px, world_x0, world_y0) anchoring pixel (0,0) in the world.

    Derived from the anchoring convention: the episode's start pose sits on
    the sketch's start marker.
    """
    mx, my = sketch.start_marker
    x0 = start.x - mx * sketch.scale
    y0 = start.y - my * sketch.scale
    return sketch.scale, x0, y0


def to_raster(emap: ExplorationMap, sketch: SketchMap, start: AgentPose) -> np.ndarray:
    """Resample the map into the sketch raster frame.

    OCCUPIED -> 255, FREE -> 0, UNKNOWN (and out of map) -> 128; nearest
    neighbour at each pixel center.
    """
    scale, x0, y0 = raster_transform(sketch, start)
    h_px, w_px = sketch.pixels.shape
    px = (np.arange(w_px) + 0.5) * scale + x0
    py = (np.arange(h_px) + 0.5) * scale + y0
    cx = np.floor((px - emap.origin[0]) / emap.resolution).astype(np.intp)
    cy = np.floor((py - emap.origin[1]) / emap.resolution).astype(np.intp)
    mh, mw = emap.states.shape
    okx = (cx >= 0) & (cx < mw)
    oky = (cy >= 0) & (cy < mh)
    out = np.full((h_px, w_px), np.uint8(_STATE_SHADE[UNKNOWN]))
    if okx.any() and oky.any():
        sub = emap.states[np.ix_(cy[oky], cx[okx])]
        shades = np.array([_STATE_SHADE[UNKNOWN], _STATE_SHADE[FREE],
                           _STATE_SHADE[OCCUPIED]], dtype=np.uint8)
        out[np.ix_(oky, okx)] = shades[sub]
    return out


def world_to_raster_px(x: float, y: float, sketch: SketchMap,
                       start: AgentPose) -> tuple[float, float]:
    """World meters -> sketch/exploration raster pixel coordinates."""
    scale, x0, y0 = raster_transform(sketch, start)
    return (x - x0) / scale, (y - y0) / scale


def grid_obstacle_raster(grid: OccupancyGrid, sketch: SketchMap,
                         start: AgentPose) -> np.ndarray:
    """The world's occupied cells rendered with the same frame as to_raster
    (255 obstacle, 0 free); reference image for a fully explored map."""
    emap = ExplorationMap(states=np.where(grid.cells, OCCUPIED, FREE).astype(np.uint8),
                          resolution=grid.resolution)
    return to_raster(emap, sketch, start)
