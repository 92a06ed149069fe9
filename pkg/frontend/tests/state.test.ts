import { describe, expect, it } from "vitest";

import type { ServiceClient } from "../src/api";
import { createConsole } from "../src/state";
import type { SessionSummary } from "../src/types";

const SESSION: SessionSummary = {
  session_id: "s1",
  image_id: "img",
  checkpoint_id: "ckpt",
  shape: [96, 96],
  class_count: 2,
  weight_policy: "reset_per_image",
  clicks: 0,
  refines: 0,
  snapshot_depth: 0,
  config_hash: "c0ffee",
  state_hash: "deadbeef",
};

interface StubLog {
  submits: number;
  refines: number;
  queries: number;
  predictions: number;
}

/** Structural stand-in for ServiceClient; only what the store touches. */
function stubClient(log: StubLog, options: { failSubmit?: boolean } = {}) {
  let gate: Promise<void> | null = null;
  let open: (() => void) | null = null;
  const stub = {
    holdRefine() {
      gate = new Promise<void>((r) => { open = r; });
    },
    releaseRefine() {
      open?.();
      gate = null;
    },
    async submitClicks() {
      log.submits += 1;
      if (options.failSubmit) throw new Error("rejected");
      return { ...SESSION, clicks: 1 };
    },
    async refine() {
      log.refines += 1;
      if (gate) await gate;
      return { ...SESSION, refines: 1, mode: "ac_only" };
    },
    async getPrediction() {
      log.predictions += 1;
      return {
        class_map: [[0]],
        palette: [[31, 119, 180], [255, 127, 14]],
        shape: [96, 96],
        config_hash: "c0ffee",
      };
    },
    async getQueries() {
      log.queries += 1;
      return {
        strategy: "entropy",
        queries: [{ window: [0, 0, 32, 32], score: 0.5, rank: 1 }],
        config_hash: "c0ffee",
      };
    },
    async getUncertainty() {
      return { method: "entropy", scores: [[0]], wall_time: 0, config_hash: "c0ffee" };
    },
    async undo() {
      return { ...SESSION, undone: true };
    },
  };
  return { stub: stub as unknown as ServiceClient, handle: stub };
}

function fresh(options: { failSubmit?: boolean } = {}) {
  const log: StubLog = { submits: 0, refines: 0, queries: 0, predictions: 0 };
  const { stub, handle } = stubClient(log, options);
  return { console: createConsole(stub, { ...SESSION }), log, handle };
}

describe("view state invariants", () => {
  it("rejects an active class outside the label space", () => {
    const { console } = fresh();
    expect(() => console.setActiveClass(2)).toThrow("outside");
    console.setActiveClass(1);
    expect(console.state.activeClass).toBe(1);
  });

  it("ignores out-of-bounds clicks with a visible hint", () => {
    const { console } = fresh();
    console.clickAt(96, 10);
    expect(console.state.pendingClicks).toHaveLength(0);
    expect(console.state.hint).toContain("outside");
    console.clickAt(10, 10);
    expect(console.state.pendingClicks).toHaveLength(1);
    expect(console.state.hint).toBeNull();
  });

  it("stamps queued clicks with the class active at click time", () => {
    const { console } = fresh();
    console.setActiveClass(1);
    console.clickAt(3, 4);
    console.setActiveClass(0);
    console.clickAt(5, 6);
    expect(console.state.pendingClicks.map((m) => m.classId)).toEqual([1, 0]);
  });

  it("clears pending clicks only after the server accepted them", async () => {
    const failing = fresh({ failSubmit: true });
    failing.console.clickAt(1, 1);
    await expect(failing.console.submit()).rejects.toThrow("rejected");
    expect(failing.console.state.pendingClicks).toHaveLength(1);

    const ok = fresh();
    ok.console.clickAt(1, 1);
    await ok.console.submit();
    expect(ok.console.state.pendingClicks).toHaveLength(0);
    expect(ok.console.state.submittedClicks).toHaveLength(1);
  });

  it("disables mutations while a refine is in flight", async () => {
    const { console, handle, log } = fresh();
    handle.holdRefine();
    const refining = console.refine("ac_only");
    expect(console.state.refineInFlight).toBe(true);

    console.clickAt(1, 1);
    expect(console.state.pendingClicks).toHaveLength(0);
    expect(console.state.hint).toContain("refine in progress");
    await console.submit();
    expect(log.submits).toBe(0);

    handle.releaseRefine();
    await refining;
    expect(console.state.refineInFlight).toBe(false);
    console.clickAt(1, 1);
    expect(console.state.pendingClicks).toHaveLength(1);
  });

  it("re-fetches the queue on a strategy switch without dropping pending clicks", async () => {
    const { console, log } = fresh();
    console.clickAt(2, 2);
    const before = log.queries;
    await console.setStrategy("odin");
    expect(log.queries).toBe(before + 1);
    expect(console.state.strategy).toBe("odin");
    expect(console.state.pendingClicks).toHaveLength(1);
    expect(console.state.uncertainty).toBeNull(); // stale scores dropped
  });

  it("keeps the session-start prediction for the diff overlay", async () => {
    const { console } = fresh();
    await console.connect();
    expect(console.state.initialClassMap).toEqual([[0]]);
    await console.refine("ac_only");
    expect(console.state.initialClassMap).toEqual([[0]]); // still the first one
  });
});
