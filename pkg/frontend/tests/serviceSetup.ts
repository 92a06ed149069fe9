import { spawn, type ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import path from "node:path";

import { SERVICE_URL, SERVICE_PORT } from "./serviceUrl";

// Boots the real session service once for the whole test run. The Python
// package ships pretrained fixture scenes; with a warm cache the server is
// up in a few seconds, a cold cache pretrains first and takes minutes.

const repoRoot = path.resolve(
  path.dirname(fileURLToPath(import.meta.url)), "..", "..");

let child: ChildProcess | undefined;

async function waitForService(deadlineMs: number): Promise<void> {
  const start = Date.now();
  let lastError: unknown = null;
  while (Date.now() - start < deadlineMs) {
    if (child && child.exitCode !== null) {
      throw new Error(`service exited early with code ${child.exitCode}`);
    }
    try {
      const response = await fetch(`${SERVICE_URL}/images`);
      if (response.ok) return;
    } catch (error) {
      lastError = error;
    }
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
  throw new Error(`service did not come up on ${SERVICE_URL}: ${lastError}`);
}

export default async function setup(): Promise<() => void> {
  const stderr: string[] = [];
  child = spawn(
    "python3",
    [
      "-m", "segloop.cli", "serve",
      "--host", "127.0.0.1",
      "--port", String(SERVICE_PORT),
      "--cache-dir", path.join(repoRoot, "tests", ".fixture_cache"),
    ],
    { cwd: repoRoot, stdio: ["ignore", "ignore", "pipe"] },
  );
  child.stderr?.on("data", (chunk: Buffer) => {
    stderr.push(chunk.toString());
    if (stderr.length > 50) stderr.shift();
  });

  try {
    await waitForService(300_000);
  } catch (error) {
    console.error("service stderr tail:\n" + stderr.join(""));
    child.kill("SIGTERM");
    throw error;
  }

  return () => {
    child?.kill("SIGTERM");
  };
}
