import { describe, expect, it } from "vitest";

import { ApiError, ServiceClient } from "../src/api";

type Deferred = { resolve: (value: Response) => void; promise: Promise<Response> };

function deferred(): Deferred {
  let resolve!: (value: Response) => void;
  const promise = new Promise<Response>((r) => { resolve = r; });
  return { resolve, promise };
}

function jsonResponse(status: number, body: unknown): Response {
  return {
    ok: status < 400,
    status,
    json: async () => body,
  } as Response;
}

describe("ServiceClient", () => {
  it("surfaces the service error envelope as ApiError", async () => {
    const client = new ServiceClient("http://svc", async () =>
      jsonResponse(422, { error: { code: "invalid_click", message: "outside" } }));
    const failure = await client
      .submitClicks("s1", [{ row: -1, col: 0, class_id: 0 }])
      .catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.status).toBe(422);
    expect(failure.code).toBe("invalid_click");
  });

  it("joins a double submission into a single request", async () => {
    const gate = deferred();
    let calls = 0;
    const client = new ServiceClient("http://svc", () => {
      calls += 1;
      return gate.promise;
    });
    const first = client.refine("s1", "ac_only");
    const second = client.refine("s1", "ac_only");
    gate.resolve(jsonResponse(200, { session_id: "s1", mode: "ac_only" }));
    const [a, b] = await Promise.all([first, second]);
    expect(calls).toBe(1);
    expect(a).toBe(b); // same settled payload, not merely equal
  });

  it("does not conflate different mutations under one token", async () => {
    let calls = 0;
    const client = new ServiceClient("http://svc", async () => {
      calls += 1;
      return jsonResponse(200, { session_id: "s1", undone: true });
    });
    await Promise.all([client.undo("s1"), client.reset("s1")]);
    expect(calls).toBe(2);
  });

  it("allows a fresh request once the previous one settled", async () => {
    let calls = 0;
    const client = new ServiceClient("http://svc", async () => {
      calls += 1;
      return jsonResponse(200, { session_id: "s1", mode: "ac_only" });
    });
    await client.refine("s1", "ac_only");
    await client.refine("s1", "ac_only");
    expect(calls).toBe(2);
  });
});
