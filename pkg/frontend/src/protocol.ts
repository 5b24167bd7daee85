/**
 * Wire protocol shared with the teleop service: text frames over WebSocket,
 * one `key=value` pair per line, mandatory `type` key. Rasters travel as
 * base64-encoded binary PGM (P5).
 */

export type FrameType = "HELLO" | "STATE" | "ACTION" | "RESULT" | "ERROR";

export interface Frame {
  type: FrameType;
  fields: Record<string, string>;
}

export type ActionName = "STOP" | "MOVE_FORWARD" | "TURN_LEFT" | "TURN_RIGHT";

export const ACTION_NAMES: ActionName[] = [
  "STOP", "MOVE_FORWARD", "TURN_LEFT", "TURN_RIGHT",
];

export function encodeFrame(type: FrameType, fields: Record<string, string>): string {
  const lines = [`type=${type}`];
  for (const [key, value] of Object.entries(fields)) {
    lines.push(`${key}=${value}`);
  }
  return lines.join("\n");
}

export function decodeFrame(text: string): Frame {
  const fields: Record<string, string> = {};
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const eq = line.indexOf("=");
    if (eq < 0) throw new Error(`malformed frame line: ${JSON.stringify(line)}`);
    fields[line.slice(0, eq).trim()] = line.slice(eq + 1);
  }
  const type = fields["type"];
  if (!type) throw new Error("frame without a type");
  delete fields["type"];
  return { type: type as FrameType, fields };
}

export interface Pgm {
  width: number;
  height: number;
  pixels: Uint8Array;
}

/** Decode a binary (P5) PGM buffer. */
export function decodePgm(data: Uint8Array): Pgm {
  if (data[0] !== 0x50 || data[1] !== 0x35) {
    throw new Error("not a P5 PGM");
  }
  let i = 2;
  const tokens: string[] = [];
  while (tokens.length < 3) {
    while (i < data.length && isSpace(data[i])) i++;
    if (data[i] === 0x23) { // '#' comment
      while (i < data.length && data[i] !== 0x0a) i++;
      continue;
    }
    let j = i;
    while (j < data.length && !isSpace(data[j])) j++;
    tokens.push(new TextDecoder().decode(data.slice(i, j)));
    i = j;
  }
  i++; // single whitespace after maxval
  const [width, height, maxval] = tokens.map((t) => parseInt(t, 10));
  if (maxval !== 255) throw new Error("only maxval 255 supported");
  const pixels = data.slice(i, i + width * height);
  if (pixels.length !== width * height) {
    throw new Error(`PGM payload truncated: ${pixels.length} of ${width * height}`);
  }
  return { width, height, pixels };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x0a || b === 0x0d || b === 0x09;
}

export function b64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export interface StateFrame {
  session: string;
  step: number;
  done: boolean;
  x: number;
  y: number;
  heading: number;
  depth: number[];
  maxRange: number;
  fov: number;
  collision: boolean;
  stopped: boolean;
  success: boolean;
  explored: Pgm;
  /** present only in the first STATE of a session */
  sketch?: Pgm;
  startMarker?: [number, number];
  goalMarker?: [number, number];
  scale?: number;
  episode?: string;
}

export function parseState(frame: Frame): StateFrame {
  if (frame.type !== "STATE") throw new Error(`expected STATE, got ${frame.type}`);
  const f = frame.fields;
  const need = (key: string): string => {
    const v = f[key];
    if (v === undefined) throw new Error(`STATE missing field ${key}`);
    return v;
  };
  const state: StateFrame = {
    session: need("session"),
    step: parseInt(need("step"), 10),
    done: need("done") === "1",
    x: parseFloat(need("x")),
    y: parseFloat(need("y")),
    heading: parseFloat(need("heading")),
    depth: need("depth").split(",").map(parseFloat),
    maxRange: parseFloat(need("max_range")),
    fov: parseFloat(need("fov")),
    collision: f["collision"] === "1",
    stopped: f["stopped"] === "1",
    success: f["success"] === "1",
    explored: decodePgm(b64ToBytes(need("explored"))),
  };
  if (f["sketch"] !== undefined) {
    state.sketch = decodePgm(b64ToBytes(f["sketch"]));
    const [sx, sy] = need("start_marker").split(",").map(parseFloat);
    const [gx, gy] = need("goal_marker").split(",").map(parseFloat);
    state.startMarker = [sx, sy];
    state.goalMarker = [gx, gy];
    state.scale = parseFloat(need("scale"));
    state.episode = f["episode"];
  }
  return state;
}
