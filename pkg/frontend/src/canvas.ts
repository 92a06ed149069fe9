import { cssColor } from "./palette";
import type { RGB } from "./types";
import type { OverlayBuffer } from "./overlay";
import type { Marker, ViewState } from "./state";
import type { QueueEntry } from "./queue";

// Canvas rendering: base image, overlay blit, click markers, patch
// rectangles, and pan/zoom to a selected patch. Browser-only — all model
// numbers come in via ViewState; nothing is computed here.

const MARKER_RADIUS = 4;

export interface CanvasView {
  render(state: ViewState, overlay: OverlayBuffer | null): void;
  /** Map a mouse event to image pixel coordinates (may be out of bounds). */
  toImage(event: MouseEvent): { row: number; col: number };
  panToPatch(window: [number, number, number, number]): void;
}

export function createCanvasView(
  canvas: HTMLCanvasElement,
  baseImage: ImageData,
): CanvasView {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas context unavailable");
  canvas.width = baseImage.width;
  canvas.height = baseImage.height;

  let scale = 1;
  let originRow = 0;
  let originCol = 0;

  function drawMarkers(markers: Marker[], state: ViewState, pending: boolean) {
    for (const marker of markers) {
      const color: RGB = state.palette[marker.classId] ?? [255, 255, 255];
      ctx!.beginPath();
      ctx!.arc(
        (marker.col - originCol) * scale,
        (marker.row - originRow) * scale,
        MARKER_RADIUS, 0, 2 * Math.PI);
      ctx!.fillStyle = cssColor(color, pending ? 0.6 : 1);
      ctx!.fill();
      ctx!.strokeStyle = "#000";
      ctx!.stroke();
    }
  }

  function drawQueue(queue: QueueEntry[], selected: number | null) {
    queue.forEach((entry, index) => {
      const [top, left, height, width] = entry.window;
      ctx!.strokeStyle = entry.annotated
        ? "rgba(128, 128, 128, 0.8)"
        : index === selected
          ? "rgba(255, 255, 0, 1)"
          : "rgba(0, 255, 128, 0.9)";
      ctx!.lineWidth = index === selected ? 3 : 1.5;
      ctx!.strokeRect(
        (left - originCol) * scale,
        (top - originRow) * scale,
        width * scale,
        height * scale);
      if (!entry.annotated) {
        ctx!.fillStyle = "rgba(0, 0, 0, 0.7)";
        ctx!.fillText(String(entry.rank),
          (left - originCol) * scale + 3,
          (top - originRow) * scale + 11);
      }
    });
  }

  return {
    render(state, overlay) {
      ctx.setTransform(1, 0, 0, 1, 0, 0);
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(imageDataToCanvas(baseImage),
        originCol, originRow, canvas.width / scale, canvas.height / scale,
        0, 0, canvas.width, canvas.height);
      if (overlay) {
        ctx.drawImage(overlayToCanvas(overlay),
          originCol, originRow, canvas.width / scale, canvas.height / scale,
          0, 0, canvas.width, canvas.height);
      }
      drawQueue(state.queue, state.selectedPatch);
      drawMarkers(state.submittedClicks, state, false);
      drawMarkers(state.pendingClicks, state, true);
    },

    toImage(event) {
      const rect = canvas.getBoundingClientRect();
      const x = ((event.clientX - rect.left) / rect.width) * canvas.width;
      const y = ((event.clientY - rect.top) / rect.height) * canvas.height;
      return {
        row: Math.floor(y / scale + originRow),
        col: Math.floor(x / scale + originCol),
      };
    },

    panToPatch(window) {
      const [top, left, height, width] = window;
      // zoom so the patch fills ~half the canvas, centered
      scale = Math.max(1, Math.floor(canvas.width / (2 * Math.max(height, width))));
      originRow = Math.max(0, top - (canvas.height / scale - height) / 2);
      originCol = Math.max(0, left - (canvas.width / scale - width) / 2);
    },
  };
}

function imageDataToCanvas(image: ImageData): HTMLCanvasElement {
  const off = document.createElement("canvas");
  off.width = image.width;
  off.height = image.height;
  off.getContext("2d")!.putImageData(image, 0, 0);
  return off;
}

function overlayToCanvas(overlay: OverlayBuffer): HTMLCanvasElement {
  const off = document.createElement("canvas");
  off.width = overlay.width;
  off.height = overlay.height;
  // Copy so the ImageData owns a plain ArrayBuffer-backed view.
  const pixels = new Uint8ClampedArray(overlay.data);
  off.getContext("2d")!.putImageData(
    new ImageData(pixels, overlay.width, overlay.height), 0, 0);
  return off;
}
