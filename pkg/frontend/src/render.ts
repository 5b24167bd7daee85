/**
 * Panel rendering into plain RGBA pixel buffers.
 *
 * Keeping the drawing pure (no DOM types) lets the same code run in node
 * tests; the browser shell blits the buffers into canvases via ImageData.
 * Rendering is a function of the latest STATE frame only.
 */
import { Pgm, StateFrame } from "./protocol.js";

export interface PixelBuffer {
  width: number;
  height: number;
  data: Uint8ClampedArray;    // RGBA
}

export function makeBuffer(width: number, height: number): PixelBuffer {
  return { width, height, data: new Uint8ClampedArray(width * height * 4) };
}

export function fill(buf: PixelBuffer, r: number, g: number, b: number): void {
  for (let i = 0; i < buf.width * buf.height; i++) {
    buf.data[4 * i] = r;
    buf.data[4 * i + 1] = g;
    buf.data[4 * i + 2] = b;
    buf.data[4 * i + 3] = 255;
  }
}

export function setPixel(buf: PixelBuffer, x: number, y: number,
                         r: number, g: number, b: number): void {
  if (x < 0 || y < 0 || x >= buf.width || y >= buf.height) return;
  const i = 4 * (y * buf.width + x);
  buf.data[i] = r;
  buf.data[i + 1] = g;
  buf.data[i + 2] = b;
  buf.data[i + 3] = 255;
}

/** World meters -> raster pixels, anchored at the sketch start marker. */
export interface Anchor {
  scale: number;    // meters per raster pixel
  x0: number;       // world position of raster pixel (0, 0)
  y0: number;
}

export function makeAnchor(firstState: StateFrame): Anchor | null {
  if (firstState.scale === undefined || !firstState.startMarker) return null;
  return {
    scale: firstState.scale,
    x0: firstState.x - firstState.startMarker[0] * firstState.scale,
    y0: firstState.y - firstState.startMarker[1] * firstState.scale,
  };
}

/** Exploration raster: three-state palette (unknown gray, free white, wall black). */
export function renderExploration(state: StateFrame, buf: PixelBuffer,
                                  anchor: Anchor | null = null): void {
  drawRaster(state.explored, buf, (v) => {
    if (v >= 192) return [30, 30, 30];        // occupied ink
    if (v >= 64) return [150, 150, 150];      // unknown mid-gray
    return [245, 245, 245];                   // free
  });
  if (anchor) {
    const px = (state.x - anchor.x0) / anchor.scale;
    const py = (state.y - anchor.y0) / anchor.scale;
    drawAgent(buf, px * (buf.width / state.explored.width),
              py * (buf.height / state.explored.height), state.heading);
  }
}

/** Sketch panel with start (blue) and goal (purple) markers. */
export function renderSketch(sketch: Pgm, start: [number, number] | undefined,
                             goal: [number, number] | undefined,
                             buf: PixelBuffer): void {
  drawRaster(sketch, buf, (v) => (v >= 128 ? [20, 20, 20] : [255, 255, 255]));
  const sx = buf.width / sketch.width;
  const sy = buf.height / sketch.height;
  if (start) drawDot(buf, start[0] * sx, start[1] * sy, 3, [40, 90, 220]);
  if (goal) drawDot(buf, goal[0] * sx, goal[1] * sy, 3, [150, 40, 180]);
}

/** Depth fan: polar plot of the 1-D range readings, agent at the bottom center. */
export function renderDepthFan(state: StateFrame, buf: PixelBuffer): void {
  fill(buf, 250, 250, 250);
  const cx = buf.width / 2;
  const cy = buf.height - 4;
  const rMax = Math.min(buf.width / 2 - 4, buf.height - 8);
  const n = state.depth.length;
  for (let j = 0; j < n; j++) {
    // fan straight up: ray angle relative to the heading
    const rel = n === 1 ? 0 : state.fov * (j / (n - 1) - 0.5);
    const ang = -Math.PI / 2 + rel;
    const r = (state.depth[j] / state.maxRange) * rMax;
    const hit = state.depth[j] < state.maxRange - 1e-9;
    for (let t = 0; t < r; t += 0.5) {
      setPixel(buf, Math.round(cx + t * Math.cos(ang)),
               Math.round(cy + t * Math.sin(ang)), 210, 225, 245);
    }
    const ex = Math.round(cx + r * Math.cos(ang));
    const ey = Math.round(cy + r * Math.sin(ang));
    const c: [number, number, number] = hit ? [180, 60, 50] : [120, 160, 120];
    setPixel(buf, ex, ey, ...c);
    setPixel(buf, ex + 1, ey, ...c);
    setPixel(buf, ex, ey + 1, ...c);
  }
  drawDot(buf, cx, cy, 2, [0, 0, 0]);
}

function drawRaster(img: Pgm, buf: PixelBuffer,
                    palette: (v: number) => [number, number, number]): void {
  for (let y = 0; y < buf.height; y++) {
    const sy = Math.min(img.height - 1, Math.floor((y * img.height) / buf.height));
    for (let x = 0; x < buf.width; x++) {
      const sx = Math.min(img.width - 1, Math.floor((x * img.width) / buf.width));
      const [r, g, b] = palette(img.pixels[sy * img.width + sx]);
      setPixel(buf, x, y, r, g, b);
    }
  }
}

function drawDot(buf: PixelBuffer, cx: number, cy: number, radius: number,
                 rgb: [number, number, number]): void {
  for (let dy = -radius; dy <= radius; dy++) {
    for (let dx = -radius; dx <= radius; dx++) {
      if (dx * dx + dy * dy <= radius * radius) {
        setPixel(buf, Math.round(cx + dx), Math.round(cy + dy), ...rgb);
      }
    }
  }
}

function drawAgent(buf: PixelBuffer, x: number, y: number, heading: number): void {
  drawDot(buf, x, y, 3, [200, 60, 40]);
  for (let t = 0; t < 8; t++) {
    setPixel(buf, Math.round(x + t * Math.cos(heading)),
             Math.round(y + t * Math.sin(heading)), 200, 60, 40);
  }
}
