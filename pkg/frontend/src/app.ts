/**
 * Browser entry point: three canvas panels (sketch, live exploration map,
 * depth fan), arrow-key/space teleop in lockstep with the service.
 */
import { decodeFrame, encodeFrame, StateFrame } from "./protocol.js";
import { ClientSession, KEY_BINDINGS } from "./session.js";
import { Anchor, makeAnchor, makeBuffer, renderDepthFan, renderExploration,
         renderSketch } from "./render.js";

const PANEL = 256;

function canvasCtx(id: string): CanvasRenderingContext2D {
  const canvas = document.getElementById(id) as HTMLCanvasElement;
  canvas.width = PANEL;
  canvas.height = PANEL;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error(`no 2d context for #${id}`);
  return ctx;
}

function banner(text: string, isError = false): void {
  const el = document.getElementById("banner");
  if (el) {
    el.textContent = text;
    el.className = isError ? "banner error" : "banner";
  }
}

export function start(): void {
  const params = new URLSearchParams(window.location.search);
  const server = params.get("server") ?? `ws://${window.location.hostname}:8765/`;
  const split = params.get("split") ?? "val_seen";
  const abstraction = params.get("abstraction") ?? "LOW";
  const episode = params.get("episode") ?? "next";

  const sketchCtx = canvasCtx("sketch");
  const mapCtx = canvasCtx("map");
  const depthCtx = canvasCtx("depth");
  const sketchBuf = makeBuffer(PANEL, PANEL);
  const mapBuf = makeBuffer(PANEL, PANEL);
  const depthBuf = makeBuffer(PANEL, PANEL);

  let anchor: Anchor | null = null;
  let pendingState: StateFrame | null = null;
  let ws: WebSocket;

  const session = new ClientSession(
    (type, fields) => ws.send(encodeFrame(type, fields)),
    {
      onState: (state) => {
        if (anchor === null) anchor = makeAnchor(state);
        pendingState = state;
        requestAnimationFrame(draw);
      },
      onResult: (fields) => {
        const ok = fields["success"] === "1";
        banner(ok
          ? `Success! SPL ${Number(fields["spl"]).toFixed(2)} in ${fields["steps"]} steps`
          : `Episode over (no success) after ${fields["steps"]} steps`);
      },
      onError: (fields) => banner(`Protocol error: ${fields["message"]}`, true),
    });

  function draw(): void {
    const state = pendingState;
    if (!state) return;
    if (session.sketch) {
      renderSketch(session.sketch, session.startMarker, session.goalMarker, sketchBuf);
      sketchCtx.putImageData(new ImageData(new Uint8ClampedArray(sketchBuf.data), PANEL, PANEL), 0, 0);
    }
    renderExploration(state, mapBuf, anchor);
    mapCtx.putImageData(new ImageData(new Uint8ClampedArray(mapBuf.data), PANEL, PANEL), 0, 0);
    renderDepthFan(state, depthBuf);
    depthCtx.putImageData(new ImageData(new Uint8ClampedArray(depthBuf.data), PANEL, PANEL), 0, 0);
    const stepEl = document.getElementById("step");
    if (stepEl) stepEl.textContent = `step ${state.step}`
      + (state.collision ? "  [bump]" : "");
  }

  try {
    ws = new WebSocket(server);
  } catch (e) {
    banner(`Cannot reach ${server}`, true);
    return;
  }
  ws.onopen = () => {
    banner(`Connected. Arrows move/turn, space stops. Episode: ${episode}`);
    session.hello(split, abstraction, episode);
  };
  ws.onmessage = (ev: MessageEvent) => {
    try {
      session.handleFrame(decodeFrame(String(ev.data)));
    } catch (e) {
      banner(`Bad frame: ${e}`, true);
    }
  };
  ws.onerror = () => banner(`Connection to ${server} failed`, true);
  ws.onclose = () => {
    if (session.outcome === "running") banner("Connection closed", true);
  };

  window.addEventListener("keydown", (ev: KeyboardEvent) => {
    if (ev.key in KEY_BINDINGS) {
      ev.preventDefault();
      session.keyPressed(ev.key);
    }
  });
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", start);
}
