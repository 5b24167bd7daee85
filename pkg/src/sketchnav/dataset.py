"""Dataset generation and loading.

Layout on disk:
    worlds/<world_id>.grid
    episodes/<episode_id>.episode
    sketches/<episode_id>.low.pgm (+ .meta) and .high.pgm (+ .meta)
    manifest.txt

The manifest is line-delimited: `world <id> <seed> <split>` and
`episode <id> <world_id> <split>`. Train and val-seen episodes share train
worlds (different trajectories); val-unseen episodes use worlds from a
disjoint seed block, and the generator refuses to emit a manifest where a
world seed appears in both train and val-unseen.

Start and goal come from the trajectory sampled on the denoised layout and
must also be valid in the raw world (the denoising pass deletes small
obstacles, so a layout-free cell can be occupied for real); invalid draws
are retried with fresh trajectory seeds. Start headings follow the anchoring
convention: the agent begins facing "up" (the -y direction).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sketch as SK
from . import worldgen as WG
from .config import RunConfig
from .grid import AgentPose, EpisodeSpec, OccupancyGrid, episode_from_text, \
    episode_to_text, geodesic_distance
from .worldgen import LayoutMap, TrajectorySample

UNSEEN_SEED_BLOCK = 100_000
HEADING_UP = 3.0 * math.pi / 2.0

SPLITS = ("train", "val_seen", "val_unseen")


class DatasetError(Exception):
    pass


@dataclass
class EpisodeEntry:
    episode_id: str
    world_id: str
    split: str


@dataclass
class Manifest:
    worlds: dict[str, tuple[int, str]] = field(default_factory=dict)  # id -> (seed, split)
    episodes: list[EpisodeEntry] = field(default_factory=list)

    def split_episodes(self, split: str) -> list[EpisodeEntry]:
        return [e for e in self.episodes if e.split == split]

    def validate(self) -> None:
        train_seeds = {s for s, sp in self.worlds.values() if sp == "train"}
        unseen_seeds = {s for s, sp in self.worlds.values() if sp == "val_unseen"}
        if train_seeds & unseen_seeds:
            raise DatasetError(f"world seeds shared between train and val_unseen: "
                               f"{sorted(train_seeds & unseen_seeds)}")

    def to_text(self) -> str:
        lines = []
        for wid in sorted(self.worlds):
            seed, split = self.worlds[wid]
            lines.append(f"world {wid} {seed} {split}")
        for e in self.episodes:
            lines.append(f"episode {e.episode_id} {e.world_id} {e.split}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        m = cls()
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "world":
                m.worlds[parts[1]] = (int(parts[2]), parts[3])
            elif parts[0] == "episode":
                m.episodes.append(EpisodeEntry(parts[1], parts[2], parts[3]))
        return m


def _render_episode(world: OccupancyGrid, layout: LayoutMap, labels, cfg: RunConfig,
                    traj_seed: int, min_geodesic: float,
                    max_tries: int = 30) -> tuple[TrajectorySample, LayoutMap]:
    """Trajectory valid on both the layout and the raw world, plus the trim."""
    for k in range(max_tries):
        traj = WG.sample_trajectory(layout, traj_seed + 7919 * k, min_geodesic)
        start_xy = ((traj.start[1] + 0.5) * world.resolution,
                    (traj.start[0] + 0.5) * world.resolution)
        goal_xy = ((traj.goal[1] + 0.5) * world.resolution,
                   (traj.goal[0] + 0.5) * world.resolution)
        if world.cells[traj.start] or world.cells[traj.goal]:
            continue
        d = geodesic_distance(world, start_xy, goal_xy)
        if not (min_geodesic <= d < math.inf):
            continue
        trimmed = WG.select_region(layout, traj, labels)
        return traj, trimmed
    raise DatasetError(f"no raw-world-valid trajectory found in {max_tries} tries")


def generate_dataset(cfg: RunConfig, out_dir: str | Path) -> Manifest:
    """Write the full dataset; deterministic in the config."""
    out = Path(out_dir)
    for sub in ("worlds", "episodes", "sketches"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest = Manifest()
    ds = cfg.dataset

    world_plan: list[tuple[str, int, str]] = []
    for i in range(ds.n_train_worlds):
        world_plan.append((f"w{i:04d}", ds.seed + i, "train"))
    for i in range(ds.n_val_unseen_worlds):
        world_plan.append((f"u{i:04d}", ds.seed + UNSEEN_SEED_BLOCK + i, "val_unseen"))

    for wid, seed, split in world_plan:
        world = WG.generate_world(seed, cfg.world)
        world.save(out / "worlds" / f"{wid}.grid")
        manifest.worlds[wid] = (seed, split)
        layout = WG.denoise_layout(world, cfg.pipeline.erosion_radius, provenance=wid)
        labels = WG.segment_rooms(layout, cfg.pipeline.door_threshold)

        if split == "train":
            plan = [("train", j) for j in range(ds.episodes_per_world)]
            per_world_val = ds.n_val_seen_episodes // max(1, ds.n_train_worlds)
            extra = (ds.n_val_seen_episodes % ds.n_train_worlds
                     if wid == f"w{ds.n_train_worlds - 1:04d}" else 0)
            plan += [("val_seen", ds.episodes_per_world + j)
                     for j in range(per_world_val + extra)]
            min_geo = ds.min_geodesic
        else:
            plan = [("val_unseen", j) for j in range(ds.episodes_per_unseen_world)]
            min_geo = ds.unseen_min_geodesic

        for ep_split, j in plan:
            eid = f"{wid}_e{j:02d}"
            traj, trimmed = _render_episode(world, layout, labels, cfg,
                                            traj_seed=seed * 1000 + j, min_geodesic=min_geo)
            low = SK.render_sketch_low(trimmed, traj, cfg.pipeline.epsilon_low,
                                       cfg.model.raster_size)
            high = SK.render_sketch_high(trimmed, traj, seed=seed * 1000 + j,
                                         epsilon=cfg.pipeline.epsilon_high,
                                         size=cfg.model.raster_size,
                                         jitter_px=cfg.pipeline.jitter_px,
                                         min_loop_px=cfg.pipeline.min_loop_px,
                                         base_budget_px=cfg.pipeline.base_budget_px,
                                         gap_fraction=cfg.pipeline.gap_fraction)
            SK.save_sketch(out / "sketches" / f"{eid}.low.pgm", low)
            SK.save_sketch(out / "sketches" / f"{eid}.high.pgm", high)
            start = AgentPose((traj.start[1] + 0.5) * world.resolution,
                              (traj.start[0] + 0.5) * world.resolution, HEADING_UP)
            goal = ((traj.goal[1] + 0.5) * world.resolution,
                    (traj.goal[0] + 0.5) * world.resolution)
            spec = EpisodeSpec(grid=world, start=start, goal=goal,
                               success_radius=cfg.success_radius,
                               max_steps=cfg.max_steps,
                               sketch_path=f"sketches/{eid}",
                               actions=cfg.actions, sensor=cfg.sensor)
            spec.validate()
            (out / "episodes" / f"{eid}.episode").write_text(episode_to_text(spec))
            manifest.episodes.append(EpisodeEntry(eid, wid, ep_split))

    manifest.validate()
    (out / "manifest.txt").write_text(manifest.to_text())
    return manifest


@dataclass
class LoadedEpisode:
    entry: EpisodeEntry
    spec: EpisodeSpec
    sketch: SK.SketchMap
    abstraction: str

    @property
    def episode_id(self) -> str:
        return self.entry.episode_id


class Dataset:
    """Read-side access with world/sketch caching."""

    def __init__(self, root: str | Path, cfg: RunConfig | None = None):
        self.root = Path(root)
        if not (self.root / "manifest.txt").exists():
            raise DatasetError(f"no manifest.txt under {self.root}")
        self.manifest = Manifest.from_text((self.root / "manifest.txt").read_text())
        self.manifest.validate()
        self.cfg = cfg or RunConfig()
        self._worlds: dict[str, OccupancyGrid] = {}
        self._sketches: dict[tuple[str, str], SK.SketchMap] = {}

    def world(self, world_id: str) -> OccupancyGrid:
        if world_id not in self._worlds:
            self._worlds[world_id] = OccupancyGrid.load(
                self.root / "worlds" / f"{world_id}.grid")
        return self._worlds[world_id]

    def sketch(self, episode_id: str, abstraction: str) -> SK.SketchMap:
        key = (episode_id, abstraction)
        if key not in self._sketches:
            suffix = "low" if abstraction.upper() == "LOW" else "high"
            self._sketches[key] = SK.load_sketch(
                self.root / "sketches" / f"{episode_id}.{suffix}.pgm")
        return self._sketches[key]

    def episodes(self, split: str, abstraction: str = "LOW") -> list[LoadedEpisode]:
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}; expected one of {SPLITS}")
        out = []
        for entry in self.manifest.split_episodes(split):
            out.append(self.load_episode(entry, abstraction))
        if not out:
            raise DatasetError(f"split {split!r} is empty")
        return out

    def load_episode(self, entry: EpisodeEntry, abstraction: str) -> LoadedEpisode:
        grid = self.world(entry.world_id)
        text = (self.root / "episodes" / f"{entry.episode_id}.episode").read_text()
        spec = episode_from_text(text, grid, self.cfg.actions, self.cfg.sensor)
        return LoadedEpisode(entry=entry, spec=spec,
                             sketch=self.sketch(entry.episode_id, abstraction),
                             abstraction=abstraction.upper())
