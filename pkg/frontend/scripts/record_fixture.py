#!/usr/bin/env python3
"""Record a real teleop session into a frame fixture for the UI tests.

Builds (or reuses) a small dataset, serves one episode, drives the shortest
path expert through the live WebSocket service, and writes every server
frame body (base64 per line, direction-tagged) plus the client's ACTION
frames to test/fixtures/session.frames.
"""
from __future__ import annotations

import base64
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
FRONTEND = HERE.parent

sys.path.insert(0, str(FRONTEND.parent / "src"))

from sketchnav import teleop as TP
from sketchnav import training as T
from sketchnav.config import load_config
from sketchnav.dataset import Dataset, generate_dataset
from sketchnav.grid import AgentPose


def main() -> int:
    cfg = load_config(HERE / "fixture.cfg")
    data_dir = FRONTEND / "test" / "fixtures" / "dataset"
    if not (data_dir / "manifest.txt").exists():
        generate_dataset(cfg, data_dir)
    dataset = Dataset(data_dir, cfg)
    results = FRONTEND / "test" / "fixtures" / "session.results"
    if results.exists():
        results.unlink()
    server = TP.TeleopServer(dataset, "train", cfg, results, abstraction="LOW", port=0)
    server.start_background()

    ep = server.episodes[0]
    assets = T.EpisodeAssets(ep, cfg)
    spec = ep.spec

    ws = TP.WsConnection.connect(server.host, server.port)
    lines = []

    def log(direction: str, body: str) -> None:
        lines.append(direction + " " + base64.b64encode(body.encode()).decode())

    hello = TP.encode_frame("HELLO", {"split": "train", "abstraction": "LOW",
                                      "episode": ep.episode_id})
    ws.send_text(hello)
    log("C", hello)
    body = ws.recv_text()
    log("S", body)
    state = TP.decode_frame(body)
    while state.get("done") == "0":
        pose = AgentPose(float(state["x"]), float(state["y"]), float(state["heading"]))
        act = T.expert_action_for(assets, pose)
        action = TP.encode_frame("ACTION", {"action": act.name})
        ws.send_text(action)
        log("C", action)
        body = ws.recv_text()
        log("S", body)
        state = TP.decode_frame(body)
    body = ws.recv_text()           # RESULT
    log("S", body)
    ws.close()
    server.shutdown()

    out = FRONTEND / "test" / "fixtures" / "session.frames"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    result = TP.decode_frame(body)
    print(f"recorded {len(lines)} frames, episode {ep.episode_id}, "
          f"success={result.get('success')}")
    return 0 if result.get("success") == "1" else 1


if __name__ == "__main__":
    raise SystemExit(main())
