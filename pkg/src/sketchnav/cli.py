"""Command-line interface.

Subcommands: gen-dataset, train, eval, teleop-serve, replay, report,
print-config. The SKETCHNAV_OUT_ROOT environment variable, when set,
prefixes every relative output path (and only output paths).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import nn
from . import policy as PL
from . import training as TR
from .config import ConfigError, RunConfig, default_config_text, load_config
from .dataset import Dataset, DatasetError, generate_dataset
from .metrics import aggregate, read_results, write_results


def _out_path(raw: str) -> Path:
    root = os.environ.get("SKETCHNAV_OUT_ROOT", "")
    p = Path(raw)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load_cfg(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_config(path)


def cmd_gen_dataset(args) -> int:
    cfg = _load_cfg(args.config)
    out = _out_path(args.out)
    manifest = generate_dataset(cfg, out)
    n_eps = len(manifest.episodes)
    print(f"wrote {len(manifest.worlds)} worlds, {n_eps} episodes, "
          f"{2 * n_eps} sketches under {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    dataset = Dataset(args.dataset, cfg)
    out = _out_path(args.out)
    ckpt = TR.train(dataset, cfg, out, abstraction=args.abstraction,
                    resume=args.resume,
                    time_budget_s=args.time_budget_min * 60 if args.time_budget_min
                    else None)
    print(f"final checkpoint: {ckpt}.manifest / {ckpt}.bin")
    print(f"metrics log: {out / 'metrics.log'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    dataset = Dataset(args.dataset, cfg)
    episodes = dataset.episodes(args.split, args.abstraction)
    store = nn.ParameterStore(cfg.train_seed, dtype=np.float32)
    PL.make_params(store, cfg.model)
    if args.mode == "policy":
        if not args.checkpoint:
            print("eval: --checkpoint is required in policy mode", file=sys.stderr)
            return 2
        nn.restore_store(args.checkpoint, store)
        kind = TR.FULL_POLICY
    else:
        kind = TR.RANDOM_POLICY
    records = TR.evaluate(episodes, cfg, store, policy_kind=kind,
                          seed=args.seed, collect_traces=True)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = write_results(out, records)
    print(f"{len(records)} episodes -> {out}")
    print(f"SR {summary.sr_pct}%  SPL {summary.spl_pct}%  "
          f"SoftSPL {summary.soft_spl}  DTG {summary.dtg_m} m")
    return 0


def cmd_teleop_serve(args) -> int:
    from .teleop import TeleopServer
    cfg = _load_cfg(args.config)
    dataset = Dataset(args.dataset, cfg)
    server = TeleopServer(dataset, args.split, cfg, _out_path(args.results),
                          abstraction=args.abstraction, host=args.host,
                          port=args.port)
    print(f"teleop service on ws://{server.host}:{server.port}/ "
          f"(split={args.split}, abstraction={args.abstraction})")
    print(f"completed episodes append to {server.results_path}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_replay(args) -> int:
    from .replay import replay_episode
    cfg = _load_cfg(args.config)
    dataset = Dataset(args.dataset, cfg)
    out = _out_path(args.out)
    try:
        paths = replay_episode(args.results, args.episode, dataset, out,
                               abstraction=args.abstraction)
    except KeyError as e:
        print(f"replay: {e}", file=sys.stderr)
        return 2
    print(f"wrote {len(paths)} frames under {out}")
    return 0


def cmd_report(args) -> int:
    from .report import results_report, training_report
    written = []
    out = _out_path(args.out)
    if args.metrics:
        written += training_report(args.metrics, out)
    if args.results:
        cfg = _load_cfg(args.config)
        if not args.dataset:
            print("report: --dataset is required with --results", file=sys.stderr)
            return 2
        dataset = Dataset(args.dataset, cfg)
        written += results_report(args.results, dataset, out,
                                  abstraction=args.abstraction)
    if not written:
        print("report: nothing to do (need --metrics and/or --results)",
              file=sys.stderr)
        return 2
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_print_config(args) -> int:
    print(default_config_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sketchnav",
        description="Sketch-map guided gridworld navigation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="generate worlds, episodes and sketches")
    g.add_argument("--config", help="run configuration file")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.set_defaults(fn=cmd_gen_dataset)

    t = sub.add_parser("train", help="train the navigation policy with PPO")
    t.add_argument("--config", help="run configuration file")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True, help="run directory (checkpoints, log)")
    t.add_argument("--abstraction", default="LOW", choices=["LOW", "HIGH"])
    t.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in --out")
    t.add_argument("--time-budget-min", type=float, default=None,
                   help="stop after this many minutes (checkpoint kept)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or the random baseline")
    e.add_argument("--config", help="run configuration file")
    e.add_argument("--checkpoint", help="checkpoint path base (no suffix)")
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", required=True,
                   choices=["train", "val_seen", "val_unseen"])
    e.add_argument("--abstraction", default="LOW", choices=["LOW", "HIGH"])
    e.add_argument("--mode", default="policy", choices=["policy", "random"])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True, help="results file path")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("teleop-serve", help="serve live episodes for human control")
    s.add_argument("--config", help="run configuration file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="val_seen",
                   choices=["train", "val_seen", "val_unseen"])
    s.add_argument("--abstraction", default="LOW", choices=["LOW", "HIGH"])
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--results", default="human.results",
                   help="append-only results file for completed episodes")
    s.set_defaults(fn=cmd_teleop_serve)

    r = sub.add_parser("replay", help="render an episode from a results file")
    r.add_argument("--config", help="run configuration file")
    r.add_argument("--results", required=True)
    r.add_argument("--episode", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--abstraction", default="LOW", choices=["LOW", "HIGH"])
    r.add_argument("--out", required=True, help="frame output directory")
    r.set_defaults(fn=cmd_replay)

    rp = sub.add_parser("report", help="render figures and tables")
    rp.add_argument("--config", help="run configuration file")
    rp.add_argument("--metrics", help="training metrics log")
    rp.add_argument("--results", help="evaluation results file")
    rp.add_argument("--dataset", help="dataset dir (needed with --results)")
    rp.add_argument("--abstraction", default="LOW", choices=["LOW", "HIGH"])
    rp.add_argument("--out", required=True)
    rp.set_defaults(fn=cmd_report)

    pc = sub.add_parser("print-config", help="print the default configuration")
    pc.set_defaults(fn=cmd_print_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DatasetError, nn.CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
