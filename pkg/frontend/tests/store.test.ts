import { describe, expect, it } from "vitest";

import { Api, ApiError, ClustersDoc } from "../src/api.js";
import { ReviewStore } from "../src/store.js";

function clustersDoc(nodes: Array<Partial<ClustersDoc["nodes"][number]> & { id: number }>): ClustersDoc {
  return {
    revision: 0,
    n_tiles: nodes.reduce((total, n) => total + (n.size ?? 0), 0),
    labels: ["cancer", "benign epithelium", "stroma", "other"],
    nodes: nodes.map((n) => ({
      parent_id: null,
      size: 10,
      label: null,
      purity: null,
      children: [],
      actionable: true,
      ...n,
    })),
  };
}

class FakeApi {
  doc: ClustersDoc;
  failNextLabel: ApiError | null = null;
  labelCalls: Array<{ nodeId: number; label: string; expected?: number }> = [];

  constructor(doc: ClustersDoc) {
    this.doc = doc;
  }

  async getClusters(): Promise<ClustersDoc> {
    return structuredClone(this.doc);
  }

  async getSamples(nodeId: number, m: number, seed: number) {
    return {
      node_id: nodeId,
      revision: this.doc.revision,
      seed,
      tiles: Array.from({ length: m }, (_, i) => ({
        row: i,
        tile_id: `t${i}`,
        label: null,
        url: `/tiles/t${i}?seed=${seed}`,
      })),
    };
  }

  async label(nodeId: number, label: string, expected?: number) {
    this.labelCalls.push({ nodeId, label, expected });
    if (this.failNextLabel) {
      const failure = this.failNextLabel;
      this.failNextLabel = null;
      throw failure;
    }
    this.doc.revision += 1;
    const node = this.doc.nodes.find((n) => n.id === nodeId);
    if (node) {
      node.label = label;
      node.actionable = false;
    }
    return { revision: this.doc.revision };
  }

  async split(nodeId: number, k: number) {
    const node = this.doc.nodes.find((n) => n.id === nodeId);
    if (!node) throw new ApiError(404, `unknown node ${nodeId}`);
    if (node.label !== null) throw new ApiError(409, `cannot split labeled node ${nodeId}`);
    this.doc.revision += 1;
    const children: number[] = [];
    const base = Math.max(...this.doc.nodes.map((n) => n.id)) + 1;
    const childSize = Math.floor(node.size / k);
    for (let i = 0; i < k; i++) {
      const id = base + i;
      children.push(id);
      this.doc.nodes.push({
        id,
        parent_id: nodeId,
        size: i === k - 1 ? node.size - childSize * (k - 1) : childSize,
        label: null,
        purity: null,
        children: [],
        actionable: true,
      });
    }
    node.children = children;
    node.actionable = false;
    return { children, revision: this.doc.revision };
  }

  async exportCsv(): Promise<string> {
    return "tile_id,label,node_id,purity\n";
  }
}

function makeStore(nodeCount = 32): { store: ReviewStore; api: FakeApi } {
  const api = new FakeApi(
    clustersDoc(Array.from({ length: nodeCount }, (_, i) => ({ id: i, size: 100 - i }))),
  );
  const store = new ReviewStore(api as unknown as Api);
  return { store, api };
}

describe("ReviewStore", () => {
  it("shows one card per root cluster, sorted by size descending", async () => {
    const { store } = makeStore(32);
    await store.refresh();
    const cards = store.actionableCards();
    expect(cards).toHaveLength(32);
    const sizes = cards.map((c) => c.size);
    expect(sizes).toEqual([...sizes].sort((a, b) => b - a));
  });

  it("labeling removes a card from the frontier and records history", async () => {
    const { store } = makeStore(32);
    await store.refresh();
    const ok = await store.label(3, "stroma");
    expect(ok).toBe(true);
    expect(store.actionableCards()).toHaveLength(31);
    expect(store.labeledCards().map((n) => n.id)).toEqual([3]);
    expect(store.history.at(-1)).toMatchObject({ action: "label", nodeId: 3, status: "ok" });
  });

  it("splitting adds k cards: 31 actionable + 4 children = 35", async () => {
    const { store } = makeStore(32);
    await store.refresh();
    await store.label(0, "cancer");
    const ok = await store.split(1, 4);
    expect(ok).toBe(true);
    // 30 remaining roots + 4 children actionable; 1 labeled; split parent inactive
    expect(store.actionableCards()).toHaveLength(34);
    expect(store.nodes.size).toBe(36);
  });

  it("optimistic label rolls back on server rejection", async () => {
    const { store, api } = makeStore(4);
    await store.refresh();
    api.failNextLabel = new ApiError(500, "boom");
    const ok = await store.label(2, "cancer");
    expect(ok).toBe(false);
    expect(store.nodes.get(2)?.label).toBeNull();
    expect(store.history.at(-1)).toMatchObject({ action: "label", status: "rejected" });
    expect(store.lastError).toContain("boom");
  });

  it("409 conflict reloads fresh server state", async () => {
    const { store, api } = makeStore(4);
    await store.refresh();
    // another writer labeled node 1 on the server in the meantime
    api.doc.revision = 5;
    const serverNode = api.doc.nodes.find((n) => n.id === 1);
    if (serverNode) {
      serverNode.label = "other";
      serverNode.actionable = false;
    }
    api.failNextLabel = new ApiError(409, "tree moved on: revision is 5, you expected 0");
    const ok = await store.label(1, "cancer");
    expect(ok).toBe(false);
    expect(store.revision).toBe(5);
    expect(store.nodes.get(1)?.label).toBe("other"); // fresh state, not our optimistic value
  });

  it("split rejection surfaces the server error verbatim", async () => {
    const { store } = makeStore(4);
    await store.refresh();
    await store.label(0, "cancer");
    const ok = await store.split(0, 4);
    expect(ok).toBe(false);
    expect(store.lastError).toContain("cannot split labeled node 0");
  });

  it("resample requests a new seed and fresh thumbnails", async () => {
    const { store } = makeStore(4);
    await store.refresh();
    await store.loadSamples(2, 0);
    const before = store.samples.get(2)?.tiles[0]?.url;
    await store.resample(2);
    const after = store.samples.get(2)?.tiles[0]?.url;
    expect(store.samples.get(2)?.seed).toBe(1);
    expect(after).not.toEqual(before);
  });

  it("connectivity loss flags the store instead of going silently stale", async () => {
    const { store, api } = makeStore(4);
    await store.refresh();
    expect(store.connected).toBe(true);
    api.getClusters = async () => {
      throw new Error("connection refused");
    };
    await store.refresh();
    expect(store.connected).toBe(false);
    expect(store.nodes.size).toBe(4); // stale data still visible, but flagged
  });
});
