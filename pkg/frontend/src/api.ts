// Typed client for the histokit serve JSON API.

export interface ClusterNode {
  id: number;
  parent_id: number | null;
  size: number;
  label: string | null;
  purity: number | null;
  children: number[];
  actionable: boolean;
}

export interface ClustersDoc {
  revision: number;
  n_tiles: number;
  labels: string[];
  nodes: ClusterNode[];
}

export interface SampleTile {
  row: number;
  tile_id: string;
  label: string | null;
  url: string;
}

export interface SamplesDoc {
  node_id: number;
  revision: number;
  seed: number;
  tiles: SampleTile[];
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

async function parseError(resp: Response): Promise<never> {
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const doc = await resp.json();
    if (doc && typeof doc.error === "string") message = doc.error;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(resp.status, message);
}

export class Api {
  constructor(private readonly baseUrl: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  getClusters(): Promise<ClustersDoc> {
    return this.getJson<ClustersDoc>("/api/clusters");
  }

  getSamples(nodeId: number, m: number, seed: number): Promise<SamplesDoc> {
    return this.getJson<SamplesDoc>(`/api/clusters/${nodeId}/samples?m=${m}&seed=${seed}`);
  }

  async label(
    nodeId: number,
    label: string,
    expectedRevision?: number,
    actor = "ui",
  ): Promise<{ revision: number }> {
    return this.postJson(`/api/clusters/${nodeId}/label`, {
      label,
      actor,
      ...(expectedRevision === undefined ? {} : { expected_revision: expectedRevision }),
    });
  }

  async split(
    nodeId: number,
    k: number,
    seed?: number,
    expectedRevision?: number,
    actor = "ui",
  ): Promise<{ children: number[]; revision: number }> {
    return this.postJson(`/api/clusters/${nodeId}/split`, {
      k,
      actor,
      ...(seed === undefined ? {} : { seed }),
      ...(expectedRevision === undefined ? {} : { expected_revision: expectedRevision }),
    });
  }

  async exportCsv(): Promise<string> {
    const resp = await fetch(this.baseUrl + "/api/export");
    if (!resp.ok) await parseError(resp);
    return resp.text();
  }
}
