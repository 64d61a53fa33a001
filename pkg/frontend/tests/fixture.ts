// Test fixtures: synthetic datasets written in the documented external
// formats (EMB1 bytes, manifest CSV), driven through the histokit CLI.

import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import net from "node:net";
import { tmpdir } from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const SRC_DIR = path.resolve(HERE, "../../src");
export const PYTHON = process.env.HISTOKIT_PYTHON ?? "python3";

export function emb1Buffer(rows: number[][]): Buffer {
  const n = rows.length;
  const dim = rows[0]?.length ?? 0;
  const header = Buffer.alloc(20);
  header.write("EMB1", 0, "ascii");
  header.writeUInt32LE(1, 4);
  header.writeBigUInt64LE(BigInt(n), 8);
  header.writeUInt32LE(dim, 16);
  const values = Buffer.alloc(n * dim * 4);
  let offset = 0;
  for (const row of rows) {
    for (const v of row) {
      values.writeFloatLE(v, offset);
      offset += 4;
    }
  }
  return Buffer.concat([header, values]);
}

// deterministic LCG so fixtures never depend on Math.random
function makeRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

export interface Dataset {
  dir: string;
  embeddings: string;
  manifest: string;
  nTiles: number;
  clusterSizes: number[];
}

/** Four well-separated 2-d blobs; sizes differ so size-ordering is testable. */
export function writeDataset(prefix = "histokit-ui-"): Dataset {
  const dir = mkdtempSync(path.join(tmpdir(), prefix));
  const rng = makeRng(7);
  const centers = [
    [0, 0],
    [30, 0],
    [0, 30],
    [30, 30],
  ];
  const sizes = [60, 50, 40, 30];
  const rows: number[][] = [];
  const manifestLines = ["tile_id,slide_id,patient_id,label"];
  let tile = 0;
  sizes.forEach((count, blob) => {
    for (let i = 0; i < count; i++) {
      const x = centers[blob][0] + (rng() - 0.5) * 2;
      const y = centers[blob][1] + (rng() - 0.5) * 2;
      rows.push([x, y]);
      manifestLines.push(`t${String(tile).padStart(4, "0")},s0,p${blob},blob${blob}`);
      tile += 1;
    }
  });
  const embeddings = path.join(dir, "embeddings.emb1");
  const manifest = path.join(dir, "manifest.csv");
  writeFileSync(embeddings, emb1Buffer(rows));
  writeFileSync(manifest, manifestLines.join("\n") + "\n");
  return { dir, embeddings, manifest, nTiles: tile, clusterSizes: sizes };
}

export function runCli(args: string[], cwd: string): void {
  const result = spawnSync(PYTHON, ["-m", "histokit", ...args], {
    cwd,
    env: { ...process.env, PYTHONPATH: SRC_DIR },
    encoding: "utf-8",
  });
  if (result.status !== 0) {
    throw new Error(
      `histokit ${args.join(" ")} failed (${result.status}): ${result.stderr}`,
    );
  }
}

export async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = net.createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        server.close(() => reject(new Error("no port assigned")));
      }
    });
  });
}

export interface RunningServer {
  proc: ChildProcess;
  baseUrl: string;
  port: number;
}

export async function startServer(dataset: Dataset, port: number): Promise<RunningServer> {
  const proc = spawn(
    PYTHON,
    [
      "-m",
      "histokit",
      "serve",
      "--embeddings",
      dataset.embeddings,
      "--manifest",
      dataset.manifest,
      "--out",
      path.join(dataset.dir, "out"),
      "--host",
      "127.0.0.1",
      "--port",
      String(port),
    ],
    { env: { ...process.env, PYTHONPATH: SRC_DIR }, stdio: "ignore" },
  );
  const baseUrl = `http://127.0.0.1:${port}`;
  await waitForServer(baseUrl);
  return { proc, baseUrl, port };
}

export async function waitForServer(baseUrl: string, timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(baseUrl + "/api/clusters");
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`server at ${baseUrl} never became ready`);
}

export function killServer(server: RunningServer): Promise<void> {
  return new Promise((resolve) => {
    server.proc.once("exit", () => resolve());
    server.proc.kill("SIGKILL");
  });
}
