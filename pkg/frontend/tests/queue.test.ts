import { describe, expect, it } from "vitest";

import { mergeQueue, windowContains, type QueueEntry } from "../src/queue";
import type { PatchQuery } from "../src/types";

const q = (row: number, col: number, rank: number): PatchQuery => ({
  window: [row, col, 32, 32],
  score: 1 / rank,
  rank,
});

describe("windowContains", () => {
  it("is inclusive at the origin and exclusive at the far edge", () => {
    const window: [number, number, number, number] = [10, 20, 32, 32];
    expect(windowContains(window, 10, 20)).toBe(true);
    expect(windowContains(window, 41, 51)).toBe(true);
    expect(windowContains(window, 42, 20)).toBe(false);
    expect(windowContains(window, 10, 52)).toBe(false);
    expect(windowContains(window, 9, 20)).toBe(false);
  });
});

describe("mergeQueue", () => {
  it("passes the server order through untouched", () => {
    const pending = [q(0, 0, 1), q(64, 0, 2), q(0, 64, 3)];
    const merged = mergeQueue(pending, [], []);
    expect(merged.map((e) => e.rank)).toEqual([1, 2, 3]);
    expect(merged.every((e) => !e.annotated)).toBe(true);
  });

  it("retires entries that vanished because they were clicked", () => {
    const before: QueueEntry[] = [
      { ...q(0, 0, 1), annotated: false },
      { ...q(64, 0, 2), annotated: false },
    ];
    const merged = mergeQueue([q(64, 0, 1)], before, [{ row: 5, col: 5 }]);
    expect(merged.map((e) => [e.window[0], e.annotated])).toEqual([
      [64, false],
      [0, true],
    ]);
  });

  it("drops vanished entries that were never clicked", () => {
    const before: QueueEntry[] = [{ ...q(0, 0, 5), annotated: false }];
    const merged = mergeQueue([q(64, 0, 1)], before, []);
    expect(merged).toHaveLength(1);
    expect(merged[0].window[0]).toBe(64);
  });
});
