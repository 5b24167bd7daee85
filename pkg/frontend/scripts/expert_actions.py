#!/usr/bin/env python3
"""Print the shortest-path expert action sequence for an episode.

Usage: expert_actions.py <dataset_dir> <episode_id>
Output: comma-separated action names, ending with STOP.
"""
from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent.parent / "src"))

from sketchnav import training as T
from sketchnav.config import load_config
from sketchnav.dataset import Dataset
from sketchnav.grid import step


def main() -> int:
    data_dir, episode_id = sys.argv[1], sys.argv[2]
    cfg = load_config(Path(__file__).resolve().parent / "fixture.cfg")
    dataset = Dataset(data_dir, cfg)
    entry = next(e for e in dataset.manifest.episodes if e.episode_id == episode_id)
    ep = dataset.load_episode(entry, "LOW")
    assets = T.EpisodeAssets(ep, cfg)
    spec = ep.spec
    pose = spec.start
    names = []
    for i in range(spec.max_steps):
        act = T.expert_action_for(assets, pose)
        names.append(act.name)
        pose, _, done, _ = step(spec, pose, act, i)
        if done:
            break
    print(",".join(names))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
