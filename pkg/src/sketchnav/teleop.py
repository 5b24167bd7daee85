"""Live teleoperation service for human-controlled episodes.

Wire protocol: WebSocket (RFC 6455, the length-prefixed framing layered on an
HTTP upgrade handshake) carrying text frames; each frame body is one
`key=value` pair per line, and the `type` key is mandatory:

    HELLO  (client)  split, abstraction, episode (id or `next`), session?
    STATE  (server)  session, step, done, x, y, heading, depth (csv),
                     collision/stopped/success, max_range, fov,
                     explored (base64 PGM); the first STATE also carries
                     sketch (base64 PGM), start_marker, goal_marker, scale
    ACTION (client)  action = STOP | MOVE_FORWARD | TURN_LEFT | TURN_RIGHT
    RESULT (server)  success, spl, softspl, dtg, steps
    ERROR  (server)  code, message

The exchange is lockstep: one STATE per ACTION. Completed episodes are
appended to the results file in the standard episode-record format, so the
ordinary metrics pipeline applies unchanged; a client that disconnects
mid-episode leaves nothing behind (the episode is abandoned). One client per
session: a HELLO naming a session that is already attached is refused.
"""
from __future__ import annotations

import base64
import hashlib
import math
import socket
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import explore as EX
from . import metrics as MT
from .config import RunConfig
from .dataset import Dataset, LoadedEpisode
from .grid import Action, AgentPose, distance_field, render_depth, step
from .sketch import write_pgm

_WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_ACTIONS = {a.name: a for a in Action}


class ProtocolError(Exception):
    pass


# -- WebSocket framing -------------------------------------------------------------


class WsConnection:
    """One WebSocket endpoint over a connected TCP socket."""

    def __init__(self, sock: socket.socket, mask_outgoing: bool,
                 rng: np.random.Generator | None = None):
        self.sock = sock
        self.mask_outgoing = mask_outgoing
        self.rng = rng or np.random.default_rng(0)

    # handshake ---------------------------------------------------------------
    @classmethod
    def accept(cls, sock: socket.socket) -> "WsConnection":
        request = _read_until(sock, b"\r\n\r\n")
        key = None
        for line in request.decode("latin1").split("\r\n"):
            if line.lower().startswith("sec-websocket-key:"):
                key = line.split(":", 1)[1].strip()
        if key is None:
            raise ProtocolError("missing Sec-WebSocket-Key in handshake")
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_MAGIC).encode()).digest()).decode()
        sock.sendall((
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept}\r\n\r\n").encode())
        return cls(sock, mask_outgoing=False)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "WsConnection":
        sock = socket.create_connection((host, port), timeout=timeout)
        raw_key = base64.b64encode(np.random.default_rng().bytes(16)).decode()
        sock.sendall((
            f"GET / HTTP/1.1\r\nHost: {host}:{port}\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {raw_key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        ).encode())
        response = _read_until(sock, b"\r\n\r\n")
        if b"101" not in response.split(b"\r\n", 1)[0]:
            raise ProtocolError(f"handshake refused: {response[:80]!r}")
        return cls(sock, mask_outgoing=True)

    # frames --------------------------------------------------------------------
    def send_text(self, text: str) -> None:
        payload = text.encode("utf-8")
        header = bytearray([0x81])      # FIN + text opcode
        n = len(payload)
        mask_bit = 0x80 if self.mask_outgoing else 0
        if n < 126:
            header.append(mask_bit | n)
        elif n < 1 << 16:
            header.append(mask_bit | 126)
            header += struct.pack(">H", n)
        else:
            header.append(mask_bit | 127)
            header += struct.pack(">Q", n)
        if self.mask_outgoing:
            mask = bytes(int(b) for b in self.rng.integers(0, 256, 4))
            header += mask
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        self.sock.sendall(bytes(header) + payload)

    def recv_text(self) -> str | None:
        """Next text message, or None when the peer closed."""
        while True:
            head = _read_exact(self.sock, 2)
            if head is None:
                return None
            opcode = head[0] & 0x0F
            masked = bool(head[1] & 0x80)
            n = head[1] & 0x7F
            if n == 126:
                n = struct.unpack(">H", _read_exact(self.sock, 2))[0]
            elif n == 127:
                n = struct.unpack(">Q", _read_exact(self.sock, 8))[0]
            mask = _read_exact(self.sock, 4) if masked else None
            payload = _read_exact(self.sock, n) if n else b""
            if payload is None:
                return None
            if mask:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 8:         # close
                return None
            if opcode == 9:         # ping -> pong
                self.sock.sendall(bytes([0x8A, len(payload)]) + payload)
                continue
            if opcode in (1, 2):
                return payload.decode("utf-8")

    def close(self) -> None:
        try:
            self.sock.sendall(bytes([0x88, 0]))
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


def _read_until(sock: socket.socket, marker: bytes) -> bytes:
    buf = bytearray()
    while marker not in buf:
        chunk = sock.recv(4096)
        if not chunk:
            raise ProtocolError("connection closed during handshake")
        buf += chunk
        if len(buf) > 65536:
            raise ProtocolError("handshake too large")
    return bytes(buf)


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


# -- frame bodies ----------------------------------------------------------------------


def encode_frame(kind: str, fields: dict[str, str]) -> str:
    lines = [f"type={kind}"]
    for k, v in fields.items():
        lines.append(f"{k}={v}")
    return "\n".join(lines)


def decode_frame(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ProtocolError(f"malformed frame line: {line!r}")
        out[key.strip()] = value
    if "type" not in out:
        raise ProtocolError("frame without a type")
    return out


def _pgm_b64(raster: np.ndarray) -> str:
    import io
    h, w = raster.shape
    payload = f"P5\n{w} {h}\n255\n".encode() + raster.astype(np.uint8).tobytes()
    return base64.b64encode(payload).decode()


# -- sessions ------------------------------------------------------------------------------


@dataclass
class TeleopSession:
    session_id: str
    ep: LoadedEpisode
    emap: EX.ExplorationMap
    field: np.ndarray
    pose: AgentPose
    step_index: int = 0
    path_len: float = 0.0
    done: bool = False
    success: bool = False
    attached: bool = True
    sketch_sent: bool = False
    poses: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    def state_fields(self, obs, events=None) -> dict[str, str]:
        raster = EX.to_raster(self.emap, self.ep.sketch, self.ep.spec.start)
        out = {
            "session": self.session_id,
            "step": str(self.step_index),
            "done": str(int(self.done)),
            "x": repr(self.pose.x), "y": repr(self.pose.y),
            "heading": repr(self.pose.heading),
            "depth": ",".join(f"{d:.6f}" for d in obs.rays),
            "max_range": repr(obs.max_range),
            "fov": repr(obs.fov),
            "collision": str(int(events.collision)) if events else "0",
            "stopped": str(int(events.stopped)) if events else "0",
            "success": str(int(events.success)) if events else "0",
            "explored": _pgm_b64(raster),
        }
        if not self.sketch_sent:
            sk = self.ep.sketch
            out["sketch"] = _pgm_b64(sk.pixels)
            out["start_marker"] = f"{sk.start_marker[0]!r},{sk.start_marker[1]!r}"
            out["goal_marker"] = f"{sk.goal_marker[0]!r},{sk.goal_marker[1]!r}"
            out["scale"] = repr(sk.scale)
            out["episode"] = self.ep.episode_id
            self.sketch_sent = True
        return out

    def record(self) -> MT.EpisodeRecord:
        spec = self.ep.spec
        start_cell = spec.grid.cell_of(spec.start.x, spec.start.y)
        final_cell = spec.grid.cell_of(self.pose.x, self.pose.y)
        d0 = float(self.field[start_cell])
        return MT.EpisodeRecord(
            episode_id=self.ep.episode_id,
            split=self.ep.entry.split,
            success=self.success,
            path_length=self.path_len,
            shortest_length=d0,
            initial_geodesic=d0,
            final_geodesic=float(self.field[final_cell]),
            steps=self.step_index,
            poses=self.poses,
            actions=self.actions,
            goal_preds=[],
        )


class TeleopServer:
    """Threaded teleop service; one session per connection."""

    def __init__(self, dataset: Dataset, split: str, run_cfg: RunConfig,
                 results_path: str | Path, abstraction: str = "LOW",
                 host: str = "127.0.0.1", port: int = 0):
        self.dataset = dataset
        self.split = split
        self.run_cfg = run_cfg
        self.abstraction = abstraction
        self.results_path = Path(results_path)
        self.episodes = dataset.episodes(split, abstraction)
        self.next_episode = 0
        self.sessions: dict[str, TeleopSession] = {}
        self.lock = threading.Lock()
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(8)
        self.host, self.port = self.listener.getsockname()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._session_counter = 0

    # -- lifecycle ----------------------------------------------------------------
    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self.listener.accept()
            except OSError:
                break
            t = threading.Thread(target=self._handle, args=(sock,), daemon=True)
            t.start()
            self._threads.append(t)

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def shutdown(self) -> None:
        self._stop.set()
        try:
            self.listener.close()
        except OSError:
            pass

    # -- per-connection ------------------------------------------------------------
    def _handle(self, sock: socket.socket) -> None:
        session: TeleopSession | None = None
        try:
            ws = WsConnection.accept(sock)
        except (ProtocolError, OSError):
            sock.close()
            return
        try:
            msg = ws.recv_text()
            if msg is None:
                return
            frame = decode_frame(msg)
            if frame["type"] != "HELLO":
                ws.send_text(encode_frame("ERROR", {
                    "code": "expected_hello",
                    "message": f"first frame must be HELLO, got {frame['type']}"}))
                return
            try:
                session = self._open_session(frame)
            except ProtocolError as e:
                ws.send_text(encode_frame("ERROR",
                                          {"code": "refused", "message": str(e)}))
                return
            obs = render_depth(session.ep.spec.grid, session.pose,
                               self.run_cfg.sensor.n_rays, self.run_cfg.sensor.fov,
                               self.run_cfg.sensor.max_range)
            EX.integrate(session.emap, session.pose, obs)
            ws.send_text(encode_frame("STATE", session.state_fields(obs)))
            while True:
                msg = ws.recv_text()
                if msg is None:
                    break
                try:
                    frame = decode_frame(msg)
                except ProtocolError as e:
                    ws.send_text(encode_frame("ERROR", {"code": "bad_frame",
                                                        "message": str(e)}))
                    continue
                if frame["type"] != "ACTION":
                    ws.send_text(encode_frame("ERROR", {
                        "code": "unexpected_frame",
                        "message": f"expected ACTION, got {frame['type']}"}))
                    continue
                if session.done:
                    ws.send_text(encode_frame("ERROR", {
                        "code": "episode_over",
                        "message": "episode already terminated"}))
                    continue
                name = frame.get("action", "")
                if name not in _ACTIONS:
                    ws.send_text(encode_frame("ERROR", {
                        "code": "bad_action", "message": f"unknown action {name!r}"}))
                    continue
                self._apply_action(ws, session, _ACTIONS[name])
        except (OSError, ProtocolError):
            pass
        finally:
            if session is not None:
                with self.lock:
                    session.attached = False
            ws.close()

    def _open_session(self, frame: dict[str, str]) -> TeleopSession:
        with self.lock:
            sid = frame.get("session", "")
            if sid and sid in self.sessions:
                existing = self.sessions[sid]
                if existing.attached:
                    raise ProtocolError(f"session {sid} already has a client")
                raise ProtocolError(f"session {sid} was abandoned")
            if not sid:
                self._session_counter += 1
                sid = f"s{self._session_counter:04d}"
            selector = frame.get("episode", "next")
            if selector == "next":
                ep = self.episodes[self.next_episode % len(self.episodes)]
                self.next_episode += 1
            else:
                matches = [e for e in self.episodes if e.episode_id == selector]
                if not matches:
                    raise ProtocolError(f"unknown episode {selector!r} in split "
                                        f"{self.split!r}")
                ep = matches[0]
            spec = ep.spec
            session = TeleopSession(
                session_id=sid, ep=ep,
                emap=EX.ExplorationMap.blank_like(spec.grid),
                field=distance_field(spec.grid, spec.grid.cell_of(*spec.goal)),
                pose=spec.start,
                poses=[(spec.start.x, spec.start.y, spec.start.heading)])
            self.sessions[sid] = session
            return session

    def _apply_action(self, ws: WsConnection, session: TeleopSession,
                      action: Action) -> None:
        spec = session.ep.spec
        prev = session.pose
        pose, obs, done, events = step(spec, prev, action, session.step_index)
        session.pose = pose
        session.step_index += 1
        session.path_len += math.hypot(pose.x - prev.x, pose.y - prev.y)
        session.poses.append((pose.x, pose.y, pose.heading))
        session.actions.append(int(action))
        session.done = done
        session.success = events.success
        EX.integrate(session.emap, pose, obs)
        ws.send_text(encode_frame("STATE", session.state_fields(obs, events)))
        if done:
            record = session.record()
            with self.lock:
                self.results_path.parent.mkdir(parents=True, exist_ok=True)
                MT.append_result(self.results_path, record)
            ws.send_text(encode_frame("RESULT", {
                "success": str(int(session.success)),
                "spl": repr(MT.spl(record)),
                "softspl": repr(MT.soft_spl(record)),
                "dtg": repr(MT.dtg(record)),
                "steps": str(session.step_index)}))
