"""Episode replay: render logged trajectories as top-down frame sequences.

One PGM frame per executed step; frame t shows the world, the agent pose
before action t, the ground-truth goal ring and, when the record carries
goal predictions, the predicted goal marker for that step.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .explore import raster_transform
from .metrics import EpisodeRecord, read_results
from .sketch import write_pgm

BG_FREE = 230
WALL = 40
AGENT = 0
GOAL_RING = 90
PRED_MARK = 140


def _scale_for(grid_shape: tuple[int, int]) -> int:
    return max(2, 256 // max(grid_shape))


def _disk(img: np.ndarray, cx: float, cy: float, radius: int, value: int) -> None:
    h, w = img.shape
    x0, x1 = int(cx - radius), int(cx + radius) + 1
    y0, y1 = int(cy - radius), int(cy + radius) + 1
    for y in range(max(0, y0), min(h, y1)):
        for x in range(max(0, x0), min(w, x1)):
            if (x - cx) ** 2 + (y - cy) ** 2 <= radius * radius:
                img[y, x] = value


def _ring(img: np.ndarray, cx: float, cy: float, radius: int, value: int) -> None:
    h, w = img.shape
    for ang in np.linspace(0, 2 * math.pi, 10 * radius, endpoint=False):
        x = int(cx + radius * math.cos(ang))
        y = int(cy + radius * math.sin(ang))
        if 0 <= x < w and 0 <= y < h:
            img[y, x] = value


def render_frame(record: EpisodeRecord, t: int, dataset: Dataset,
                 abstraction: str = "LOW") -> np.ndarray:
    """Frame for step t (0-based); requires the dataset the episode came from."""
    entry = next(e for e in dataset.manifest.episodes
                 if e.episode_id == record.episode_id)
    ep = dataset.load_episode(entry, abstraction)
    grid = ep.spec.grid
    s = _scale_for(grid.cells.shape)
    base = np.where(grid.cells, np.uint8(WALL), np.uint8(BG_FREE))
    img = np.kron(base, np.ones((s, s), dtype=np.uint8))
    res = grid.resolution

    def world_to_img(x: float, y: float) -> tuple[float, float]:
        return x / res * s, y / res * s

    gx, gy = world_to_img(*ep.spec.goal)
    _ring(img, gx, gy, max(3, s), GOAL_RING)
    _ring(img, gx, gy, max(3, s) + 1, GOAL_RING)

    if t < len(record.goal_preds):
        scale, x0, y0 = raster_transform(ep.sketch, ep.spec.start)
        size = ep.sketch.pixels.shape[0]
        pgx, pgy = record.goal_preds[t]
        wx = x0 + pgx * size * scale
        wy = y0 + pgy * size * scale
        ix, iy = world_to_img(wx, wy)
        _disk(img, ix, iy, max(2, s // 2), PRED_MARK)

    x, y, heading = record.poses[t]
    ax, ay = world_to_img(x, y)
    _disk(img, ax, ay, max(2, s // 2), AGENT)
    for k in range(3 * s):
        hx = int(ax + k * math.cos(heading) * 0.5)
        hy = int(ay + k * math.sin(heading) * 0.5)
        if 0 <= hx < img.shape[1] and 0 <= hy < img.shape[0]:
            img[hy, hx] = AGENT
    return img


def replay_episode(results_path: str | Path, episode_id: str, dataset: Dataset,
                   out_dir: str | Path, abstraction: str = "LOW") -> list[Path]:
    """Write one PGM per step; returns the written paths in order."""
    records = [r for r in read_results(results_path) if r.episode_id == episode_id]
    if not records:
        raise KeyError(f"episode {episode_id!r} not found in {results_path}")
    record = records[0]
    if not record.poses:
        raise ValueError(f"episode {episode_id!r} carries no pose trace")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(record.steps):
        frame = render_frame(record, t, dataset, abstraction)
        p = out / f"{episode_id}_f{t:05d}.pgm"
        write_pgm(p, frame)
        paths.append(p)
    return paths
