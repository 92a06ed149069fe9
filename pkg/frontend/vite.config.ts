import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    globalSetup: ["tests/serviceSetup.ts"],
    testTimeout: 120_000,
    hookTimeout: 240_000,
    // the vitest pool shares one spawned service; keep files sequential so
    // session counts in one test can't race another file's traffic
    fileParallelism: false,
  },
});
