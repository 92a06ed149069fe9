import type { RGB } from "./types";

// Overlay builders are pure functions from server responses to RGBA pixel
// buffers; the canvas layer just blits them. Nothing in here invents a
// number the service did not send.

export type UncertaintyStyle = "top_decile" | "heatmap";

const HIGHLIGHT: RGB = [255, 64, 64];
const DIFF: RGB = [255, 220, 0];

export interface OverlayBuffer {
  data: Uint8ClampedArray; // RGBA, row-major
  height: number;
  width: number;
}

function emptyBuffer(height: number, width: number): OverlayBuffer {
  return { data: new Uint8ClampedArray(height * width * 4), height, width };
}

/** Linear-interpolated quantile of a flat array, q in [0, 1]. */
export function quantile(values: number[], q: number): number {
  if (values.length === 0) throw new Error("quantile of empty array");
  if (q < 0 || q > 1) throw new Error(`quantile level ${q} outside [0, 1]`);
  const sorted = [...values].sort((a, b) => a - b);
  const pos = q * (sorted.length - 1);
  const lo = Math.floor(pos);
  const hi = Math.ceil(pos);
  if (lo === hi) return sorted[lo];
  return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
}

/** Class-colored overlay of the predicted segmentation. */
export function segmentationOverlay(
  classMap: number[][],
  palette: RGB[],
  opacity: number,
): OverlayBuffer {
  const height = classMap.length;
  const width = classMap[0]?.length ?? 0;
  const out = emptyBuffer(height, width);
  const alpha = Math.round(255 * opacity);
  let offset = 0;
  for (let r = 0; r < height; r++) {
    const row = classMap[r];
    for (let c = 0; c < width; c++) {
      const color = palette[row[c]];
      if (!color) throw new Error(`class ${row[c]} outside palette`);
      out.data[offset] = color[0];
      out.data[offset + 1] = color[1];
      out.data[offset + 2] = color[2];
      out.data[offset + 3] = alpha;
      offset += 4;
    }
  }
  return out;
}

/** Pixels whose score strictly exceeds the ninth-quantile threshold. */
export function topDecileMask(scores: number[][]): boolean[][] {
  const threshold = quantile(scores.flat(), 0.9);
  return scores.map((row) => row.map((s) => s > threshold));
}

/**
 * Uncertainty overlay. The default presentation highlights only the
 * top-decile pixels; the heatmap style maps the full range to opacity.
 */
export function uncertaintyOverlay(
  scores: number[][],
  style: UncertaintyStyle,
  opacity: number,
): OverlayBuffer {
  const height = scores.length;
  const width = scores[0]?.length ?? 0;
  const out = emptyBuffer(height, width);
  const alpha = Math.round(255 * opacity);

  if (style === "top_decile") {
    const mask = topDecileMask(scores);
    let offset = 0;
    for (let r = 0; r < height; r++) {
      for (let c = 0; c < width; c++) {
        if (mask[r][c]) {
          out.data[offset] = HIGHLIGHT[0];
          out.data[offset + 1] = HIGHLIGHT[1];
          out.data[offset + 2] = HIGHLIGHT[2];
          out.data[offset + 3] = alpha;
        }
        offset += 4;
      }
    }
    return out;
  }

  const flat = scores.flat();
  const lo = Math.min(...flat);
  const hi = Math.max(...flat);
  const span = hi > lo ? hi - lo : 1;
  let offset = 0;
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      const t = (scores[r][c] - lo) / span;
      out.data[offset] = HIGHLIGHT[0];
      out.data[offset + 1] = HIGHLIGHT[1];
      out.data[offset + 2] = HIGHLIGHT[2];
      out.data[offset + 3] = Math.round(alpha * t);
      offset += 4;
    }
  }
  return out;
}

/** Highlight pixels whose class changed relative to the session start. */
export function diffOverlay(
  classMap: number[][],
  initialClassMap: number[][],
  opacity: number,
): OverlayBuffer {
  const height = classMap.length;
  const width = classMap[0]?.length ?? 0;
  if (initialClassMap.length !== height || (initialClassMap[0]?.length ?? 0) !== width) {
    throw new Error("diff overlay needs maps of identical shape");
  }
  const out = emptyBuffer(height, width);
  const alpha = Math.round(255 * opacity);
  let offset = 0;
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      if (classMap[r][c] !== initialClassMap[r][c]) {
        out.data[offset] = DIFF[0];
        out.data[offset + 1] = DIFF[1];
        out.data[offset + 2] = DIFF[2];
        out.data[offset + 3] = alpha;
      }
      offset += 4;
    }
  }
  return out;
}

/** RGBA of one overlay pixel, for tests and marker hit checks. */
export function pixelAt(buffer: OverlayBuffer, row: number, col: number): [number, number, number, number] {
  const offset = (row * buffer.width + col) * 4;
  return [
    buffer.data[offset],
    buffer.data[offset + 1],
    buffer.data[offset + 2],
    buffer.data[offset + 3],
  ];
}
