"""Navigation evaluation metrics and the episode results file format.

SPL follows the standard success-weighted-by-path-length definition;
SoftSPL replaces the binary success with relative geodesic progress
(1 - d_T/d_0, floored at 0). Path length is the sum of realized position
deltas, so pure turns contribute nothing. All metrics are ratios of
distances and therefore invariant to a uniform rescaling of the world.

Results files are append-only and line-delimited: one `episode` line per
record (with the full pose/action/goal-prediction trace inline) and one
`summary` line; field order is fixed and documented by the writers below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path


class InvalidEpisodeError(Exception):
    pass


@dataclass
class EpisodeRecord:
    episode_id: str
    split: str
    success: bool
    path_length: float              # p, meters
    shortest_length: float          # l, meters
    initial_geodesic: float         # d_0, meters
    final_geodesic: float           # d_T, meters
    steps: int
    poses: list[tuple[float, float, float]] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    goal_preds: list[tuple[float, float]] = field(default_factory=list)

    def validate(self) -> None:
        if self.shortest_length <= 0:
            raise InvalidEpisodeError(f"{self.episode_id}: shortest path length "
                                      f"{self.shortest_length} must be positive")
        if self.path_length < 0:
            raise InvalidEpisodeError(f"{self.episode_id}: negative path length")


def spl(record: EpisodeRecord) -> float:
    """Success weighted by shortest/realized path length ratio."""
    if record.shortest_length <= 0:
        raise InvalidEpisodeError(f"{record.episode_id}: l must be positive for SPL")
    if not record.success:
        return 0.0
    return record.shortest_length / max(record.path_length, record.shortest_length)


def soft_spl(record: EpisodeRecord) -> float:
    """SPL with binary success replaced by relative geodesic progress."""
    if record.initial_geodesic <= 0:
        raise InvalidEpisodeError(f"{record.episode_id}: d_0 must be positive")
    progress = 1.0 - min(1.0, record.final_geodesic / record.initial_geodesic)
    ratio = record.shortest_length / max(record.path_length, record.shortest_length)
    return progress * ratio


def dtg(record: EpisodeRecord) -> float:
    """Geodesic distance from the final pose to the goal (inf if disconnected)."""
    return record.final_geodesic


@dataclass
class Summary:
    count: int
    sr_pct: float
    spl_pct: float
    soft_spl: float
    dtg_m: float


def aggregate(records: list[EpisodeRecord]) -> Summary:
    """Means over episodes; SR and SPL as percentages to one decimal."""
    if not records:
        raise ValueError("cannot aggregate an empty record set")
    n = len(records)
    sr = sum(r.success for r in records) / n
    spl_mean = sum(spl(r) for r in records) / n
    soft_mean = sum(soft_spl(r) for r in records) / n
    finite = [dtg(r) for r in records if math.isfinite(dtg(r))]
    dtg_mean = sum(finite) / len(finite) if finite else math.inf
    return Summary(count=n,
                   sr_pct=round(100.0 * sr, 1),
                   spl_pct=round(100.0 * spl_mean, 1),
                   soft_spl=round(soft_mean, 4),
                   dtg_m=round(dtg_mean, 3))


# -- results file ------------------------------------------------------------------

def _fmt_pose(p: tuple[float, float, float]) -> str:
    return f"{p[0]!r},{p[1]!r},{p[2]!r}"


def record_to_line(r: EpisodeRecord) -> str:
    poses = ";".join(_fmt_pose(p) for p in r.poses)
    actions = ",".join(str(a) for a in r.actions)
    goals = ";".join(f"{g[0]!r},{g[1]!r}" for g in r.goal_preds)
    return (f"episode {r.episode_id} split={r.split} success={int(r.success)} "
            f"p={r.path_length!r} l={r.shortest_length!r} "
            f"d0={r.initial_geodesic!r} dT={r.final_geodesic!r} steps={r.steps} "
            f"actions={actions} poses={poses} goals={goals}")


def record_from_line(line: str) -> EpisodeRecord:
    parts = line.split()
    if parts[0] != "episode":
        raise ValueError(f"not an episode line: {line[:60]!r}")
    episode_id = parts[1]
    kv = {}
    for token in parts[2:]:
        key, _, value = token.partition("=")
        kv[key] = value
    poses = []
    if kv.get("poses"):
        for chunk in kv["poses"].split(";"):
            x, y, h = chunk.split(",")
            poses.append((float(x), float(y), float(h)))
    goals = []
    if kv.get("goals"):
        for chunk in kv["goals"].split(";"):
            gx, gy = chunk.split(",")
            goals.append((float(gx), float(gy)))
    actions = [int(a) for a in kv["actions"].split(",")] if kv.get("actions") else []
    return EpisodeRecord(
        episode_id=episode_id,
        split=kv["split"],
        success=bool(int(kv["success"])),
        path_length=float(kv["p"]),
        shortest_length=float(kv["l"]),
        initial_geodesic=float(kv["d0"]),
        final_geodesic=float(kv["dT"]),
        steps=int(kv["steps"]),
        poses=poses,
        actions=actions,
        goal_preds=goals,
    )


def summary_to_line(s: Summary) -> str:
    return (f"summary n={s.count} sr={s.sr_pct} spl={s.spl_pct} "
            f"softspl={s.soft_spl} dtg={s.dtg_m}")


def write_results(path: str | Path, records: list[EpisodeRecord]) -> Summary:
    s = aggregate(records)
    lines = [record_to_line(r) for r in records] + [summary_to_line(s)]
    Path(path).write_text("\n".join(lines) + "\n")
    return s


def append_result(path: str | Path, record: EpisodeRecord) -> None:
    with open(path, "a") as f:
        f.write(record_to_line(record) + "\n")


def read_results(path: str | Path) -> list[EpisodeRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("episode "):
            records.append(record_from_line(line))
    return records
