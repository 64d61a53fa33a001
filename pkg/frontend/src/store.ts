// Review-session state: optimistic label updates with rollback, split/resample,
// a visible action history, and a connectivity flag for the banner.

import { Api, ApiError, ClusterNode, ClustersDoc, SamplesDoc } from "./api.js";

export interface HistoryEntry {
  action: "label" | "split" | "resample";
  nodeId: number;
  detail: string;
  at: string;
  status: "ok" | "rejected";
}

export type Listener = () => void;

export class ReviewStore {
  connected = false;
  revision = 0;
  nTiles = 0;
  labels: string[] = [];
  nodes = new Map<number, ClusterNode>();
  samples = new Map<number, SamplesDoc>();
  sampleSize = 16;
  history: HistoryEntry[] = [];
  lastError: string | null = null;

  private listeners: Listener[] = [];

  constructor(private readonly api: Api) {}

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  private applyClusters(doc: ClustersDoc): void {
    this.revision = doc.revision;
    this.nTiles = doc.n_tiles;
    this.labels = doc.labels;
    this.nodes = new Map(doc.nodes.map((n) => [n.id, n]));
  }

  async refresh(): Promise<void> {
    try {
      this.applyClusters(await this.api.getClusters());
      this.connected = true;
      this.lastError = null;
    } catch (error) {
      // keep the stale state visible but flag it; no silent staleness
      this.connected = false;
      this.lastError = error instanceof Error ? error.message : String(error);
    }
    this.emit();
  }

  /** Actionable frontier cards, largest clusters first (server order preserved). */
  actionableCards(): ClusterNode[] {
    return [...this.nodes.values()]
      .filter((n) => n.actionable)
      .sort((a, b) => b.size - a.size || a.id - b.id);
  }

  labeledCards(): ClusterNode[] {
    return [...this.nodes.values()]
      .filter((n) => n.label !== null)
      .sort((a, b) => b.size - a.size || a.id - b.id);
  }

  private record(entry: Omit<HistoryEntry, "at">): void {
    this.history.push({ ...entry, at: new Date().toISOString() });
  }

  async label(nodeId: number, label: string): Promise<boolean> {
    const node = this.nodes.get(nodeId);
    if (!node) return false;
    const previous = node.label;
    // optimistic: show the label at once, roll back on rejection
    this.nodes.set(nodeId, { ...node, label, actionable: false });
    this.emit();
    try {
      const result = await this.api.label(nodeId, label, this.revision);
      this.revision = result.revision;
      this.record({ action: "label", nodeId, detail: label, status: "ok" });
      await this.refresh();
      return true;
    } catch (error) {
      this.nodes.set(nodeId, { ...node, label: previous });
      const message = error instanceof Error ? error.message : String(error);
      this.record({ action: "label", nodeId, detail: message, status: "rejected" });
      if (error instanceof ApiError && error.isConflict) {
        await this.refresh(); // reload fresh state after a concurrent writer
      }
      this.lastError = message; // server message stays visible after the reload
      this.emit();
      return false;
    }
  }

  async split(nodeId: number, k: number, seed?: number): Promise<boolean> {
    try {
      const result = await this.api.split(nodeId, k, seed, this.revision);
      this.revision = result.revision;
      this.record({
        action: "split",
        nodeId,
        detail: `k=${k} -> [${result.children.join(", ")}]`,
        status: "ok",
      });
      await this.refresh();
      return true;
    } catch (error) {
      const message = error instanceof Error ? error.message : String(error);
      this.record({ action: "split", nodeId, detail: message, status: "rejected" });
      if (error instanceof ApiError && error.isConflict) {
        await this.refresh();
      }
      this.lastError = message;
      this.emit();
      return false;
    }
  }

  async loadSamples(nodeId: number, seed = 0): Promise<void> {
    try {
      const doc = await this.api.getSamples(nodeId, this.sampleSize, seed);
      this.samples.set(nodeId, doc);
      this.connected = true;
    } catch (error) {
      this.connected = false;
      this.lastError = error instanceof Error ? error.message : String(error);
    }
    this.emit();
  }

  /** Request a fresh thumbnail sample with a new seed. */
  async resample(nodeId: number): Promise<void> {
    const current = this.samples.get(nodeId);
    const seed = current ? current.seed + 1 : 1;
    await this.loadSamples(nodeId, seed);
    this.record({ action: "resample", nodeId, detail: `seed=${seed}`, status: "ok" });
    this.emit();
  }
}
