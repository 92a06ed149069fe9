import type { PatchQuery } from "./types";

// Panel model for the ranked patch queue. The service owns the ordering;
// the console only decorates entries with local annotation status.

export interface QueueEntry extends PatchQuery {
  annotated: boolean;
}

export function windowContains(
  window: [number, number, number, number],
  row: number,
  col: number,
): boolean {
  const [top, left, height, width] = window;
  return row >= top && row < top + height && col >= left && col < left + width;
}

/**
 * Decorate the server's pending queue, preserving its order exactly, and
 * append locally-annotated windows as retired entries so the operator can
 * see what they already covered. The service drops annotated windows from
 * its pending list, which is why retirement is reconstructed client-side.
 */
export function mergeQueue(
  pending: PatchQuery[],
  previous: QueueEntry[],
  clicks: Array<{ row: number; col: number }>,
): QueueEntry[] {
  const entries: QueueEntry[] = pending.map((q) => ({ ...q, annotated: false }));
  const live = new Set(entries.map((q) => q.window.join(",")));
  for (const old of previous) {
    const key = old.window.join(",");
    if (live.has(key)) continue;
    const wasClicked = clicks.some((c) => windowContains(old.window, c.row, c.col));
    if (wasClicked) entries.push({ ...old, annotated: true });
  }
  return entries;
}
