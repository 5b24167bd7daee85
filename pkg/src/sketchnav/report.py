"""Report rendering: matplotlib figures plus tab-delimited tables.

Two report kinds: training curves from a metrics log, and an evaluation
report from a results file (summary table plus per-episode trajectory
figures in the shared map frame, path colored by time, predicted goals
fading toward the true goal).
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .dataset import Dataset
from .explore import raster_transform
from .metrics import EpisodeRecord, aggregate, read_results, spl, soft_spl


def parse_metrics_log(path: str | Path) -> dict[str, np.ndarray]:
    rows: list[dict[str, float]] = []
    for line in Path(path).read_text().splitlines():
        kv = {}
        for token in line.split():
            key, _, value = token.partition("=")
            try:
                kv[key] = float(value)
            except ValueError:
                continue
        if kv:
            rows.append(kv)
    if not rows:
        raise ValueError(f"no metric records in {path}")
    keys = sorted({k for r in rows for k in r})
    return {k: np.array([r.get(k, np.nan) for r in rows]) for k in keys}


def training_report(metrics_log: str | Path, out_dir: str | Path) -> list[Path]:
    """Learning-curve figure + TSV of the parsed log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = parse_metrics_log(metrics_log)
    written = []

    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = [("mean_reward", "mean episode reward"),
              ("sr", "success rate (%)"),
              ("goal_err", "mean goal prediction error"),
              ("loss", "total loss")]
    x = data.get("update", np.arange(1, len(next(iter(data.values()))) + 1))
    for ax, (key, label) in zip(axes.ravel(), panels):
        if key in data:
            ax.plot(x, data[key], lw=1.5)
        ax.set_xlabel("update")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig_path = out / "training_curves.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    written.append(fig_path)

    tsv_path = out / "training_metrics.tsv"
    keys = list(data)
    lines = ["\t".join(keys)]
    for i in range(len(x)):
        lines.append("\t".join(f"{data[k][i]:.6g}" for k in keys))
    tsv_path.write_text("\n".join(lines) + "\n")
    written.append(tsv_path)
    return written


def _trajectory_figure(record: EpisodeRecord, dataset: Dataset, out: Path,
                       abstraction: str) -> Path:
    entry = next(e for e in dataset.manifest.episodes
                 if e.episode_id == record.episode_id)
    ep = dataset.load_episode(entry, abstraction)
    grid = ep.spec.grid
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(grid.cells, cmap="gray_r", origin="upper",
              extent=(0, grid.width * grid.resolution,
                      grid.height * grid.resolution, 0))
    poses = np.array(record.poses)
    if len(poses):
        t = np.linspace(0, 1, len(poses))
        ax.scatter(poses[:, 0], poses[:, 1], c=t, cmap="rainbow", s=8, zorder=3,
                   label="agent path")
    if record.goal_preds:
        scale, x0, y0 = raster_transform(ep.sketch, ep.spec.start)
        size = ep.sketch.pixels.shape[0]
        preds = np.array([(x0 + gx * size * scale, y0 + gy * size * scale)
                          for gx, gy in record.goal_preds])
        ax.plot(preds[:, 0], preds[:, 1], "k--", lw=0.8, alpha=0.7,
                label="goal prediction")
        ax.scatter(preds[-1, 0], preds[-1, 1], marker="*", s=120, c="k", zorder=4)
    ax.scatter([ep.spec.goal[0]], [ep.spec.goal[1]], marker="x", s=100, c="red",
               zorder=5, label="goal")
    ax.set_title(f"{record.episode_id}  success={int(record.success)} "
                 f"spl={spl(record):.2f}")
    ax.legend(loc="lower right", fontsize=8)
    path = out / f"trajectory_{record.episode_id}.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def results_report(results_path: str | Path, dataset: Dataset, out_dir: str | Path,
                   abstraction: str = "LOW", max_figures: int = 8) -> list[Path]:
    """Summary TSV + per-episode trajectory figures (up to max_figures)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = read_results(results_path)
    if not records:
        raise ValueError(f"no episode records in {results_path}")
    written = []

    s = aggregate(records)
    tsv = out / "results_summary.tsv"
    lines = ["metric\tvalue",
             f"episodes\t{s.count}",
             f"sr_pct\t{s.sr_pct}",
             f"spl_pct\t{s.spl_pct}",
             f"softspl\t{s.soft_spl}",
             f"dtg_m\t{s.dtg_m}"]
    per = ["episode\tsuccess\tspl\tsoftspl\tdtg\tsteps"]
    for r in records:
        per.append(f"{r.episode_id}\t{int(r.success)}\t{spl(r):.4f}"
                   f"\t{soft_spl(r):.4f}\t{r.final_geodesic:.3f}\t{r.steps}")
    tsv.write_text("\n".join(lines) + "\n\n" + "\n".join(per) + "\n")
    written.append(tsv)

    fig, ax = plt.subplots(figsize=(6, 4))
    vals = [spl(r) for r in records]
    ax.hist(vals, bins=20, range=(0, 1), color="steelblue")
    ax.set_xlabel("per-episode SPL")
    ax.set_ylabel("episodes")
    fig_path = out / "spl_histogram.png"
    fig.savefig(fig_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(fig_path)

    for r in records[:max_figures]:
        if r.poses:
            written.append(_trajectory_figure(r, dataset, out, abstraction))
    return written
