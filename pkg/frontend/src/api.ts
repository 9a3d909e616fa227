/**
 * Typed client for the whvcanvas REST service.
 *
 * Canvas routes address canvases by bare id; node and fragment routes use
 * composite wire ids of the form "{canvasId}:{localId}". Every error
 * response carries {"error": code, "detail": text} and surfaces here as an
 * ApiError. Configuration is a base URL and an optional static token sent
 * as X-API-Token.
 */

export type PillarName = "what" | "how" | "value";
export type LevelPercent = 25 | 50 | 75 | 100;
export type ModeName = "default" | "cluster";
export type LinkKindName = "dragout" | "merge" | "steer";

export type AbstractionOperatorName = "Op_ELEVATE" | "Op_MECH" | "Op_VALUE";
export type MergeOperatorName = "Op_WH" | "Op_VW" | "Op_HV" | "Op_WHV";
export type TargetedModeName =
  | "Brainstorm"
  | "ExperimentalInnovation"
  | "FutureVision"
  | "ProductConcept";

export interface FragmentRecord {
  id: number;
  level: LevelPercent;
  pillar: PillarName;
  title: string;
  content: string;
}

export interface ParentLinkRecord {
  parent_id: string;
  kind: LinkKindName;
}

export interface NodeRecord {
  id: string;
  title: string;
  content: string;
  created_at: number;
  parent_links: ParentLinkRecord[];
  fragments: FragmentRecord[] | null;
  /** Present on node routes; canvas records keep positions in a side map. */
  position?: [number, number];
  size?: number;
}

export interface ThemeRecord {
  id: string;
  title: string;
  origin: "manual" | "auto";
  centroid: number[];
}

export interface FiltersRecord {
  levels: number[];
  pillars: PillarName[];
}

export interface TransformEdgeRecord {
  node: string;
  from: number;
  to: number;
  shift: string;
  level: LevelPercent;
}

export interface CanvasRecord {
  format_version: number;
  id: string;
  mode: ModeName;
  zoom: number;
  nodes: NodeRecord[];
  themes: ThemeRecord[];
  positions: Record<string, [number, number]>;
  filters: FiltersRecord;
  runs: unknown[];
  transform_edges: TransformEdgeRecord[];
  counters: Record<string, number>;
}

export interface EventRecord {
  seq: number;
  at: number;
  kind: string;
  subjects: string[];
  payload: Record<string, unknown>;
}

export interface LayoutRecord {
  mode: ModeName;
  positions: Record<string, [number, number]>;
  sizes: Record<string, number>;
  anchors: Record<string, [number, number]>;
}

export interface NodeViewRecord {
  id: string;
  position?: [number, number];
  size?: number;
  title?: string;
  content_preview?: string;
  fragment_titles?: Array<{
    id: number;
    level: LevelPercent;
    pillar: PillarName;
    title: string;
  }>;
  fragment_contents?: Array<{ id: number; content: string }>;
  provenance?: {
    parents: ParentLinkRecord[];
    transform_edges: TransformEdgeRecord[];
  };
}

export interface RelatedEntry {
  id: string;
  similarity: number;
}

export interface RelatedRecord {
  similar: RelatedEntry[];
  dissimilar: RelatedEntry[];
  cases: RelatedEntry[];
}

export interface TransformResponse {
  node: NodeRecord;
  run: { node_id: string; status: string; slots: unknown[] };
  edges: TransformEdgeRecord[];
}

export interface SnapshotResponse {
  snapshot: CanvasRecord;
  events: EventRecord[];
}

export type MetricsReport = Record<string, number>;

/** A non-2xx response, decoded from the service's uniform error body. */
export class ApiError extends Error {
  constructor(
    public readonly code: string,
    public readonly detail: string,
    public readonly status: number,
  ) {
    super(`[${code}] ${detail}`);
    this.name = "ApiError";
  }
}

export function nodeWire(canvasId: string, nodeId: string): string {
  return `${canvasId}:${nodeId}`;
}

export function fragmentWire(canvasId: string, fragmentId: number): string {
  return `${canvasId}:${fragmentId}`;
}

export interface ClientConfig {
  baseUrl: string;
  token?: string;
  /** Injection point for tests; defaults to the global fetch. */
  fetchImpl?: typeof fetch;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchImpl: typeof fetch;

  constructor(config: ClientConfig) {
    this.baseUrl = config.baseUrl.replace(/\/+$/, "");
    this.token = config.token;
    this.fetchImpl = config.fetchImpl ?? fetch;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.token !== undefined) headers["x-api-token"] = this.token;
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    let data: unknown = null;
    try {
      data = text ? JSON.parse(text) : null;
    } catch {
      data = null;
    }
    if (!response.ok) {
      const err = (data ?? {}) as { error?: string; detail?: string };
      throw new ApiError(
        err.error ?? "http_error",
        err.detail ?? `HTTP ${response.status}`,
        response.status,
      );
    }
    return data as T;
  }

  createCanvas(id?: string): Promise<CanvasRecord> {
    return this.request("POST", "/canvases", id === undefined ? {} : { id });
  }

  getCanvas(canvasId: string): Promise<CanvasRecord> {
    return this.request("GET", `/canvases/${canvasId}`);
  }

  createNode(
    canvasId: string,
    title: string,
    content: string,
  ): Promise<NodeRecord> {
    return this.request("POST", `/canvases/${canvasId}/nodes`, {
      title,
      content,
    });
  }

  analyzeNode(canvasId: string, nodeId: string): Promise<NodeRecord> {
    return this.request(
      "POST",
      `/nodes/${nodeWire(canvasId, nodeId)}/analyze`,
    );
  }

  transformNode(
    canvasId: string,
    nodeId: string,
    k = 5,
  ): Promise<TransformResponse> {
    return this.request(
      "POST",
      `/nodes/${nodeWire(canvasId, nodeId)}/transform`,
      { k },
    );
  }

  transformFragment(
    canvasId: string,
    fragmentId: number,
    operator: AbstractionOperatorName,
  ): Promise<{ fragment: FragmentRecord; node: NodeRecord }> {
    return this.request(
      "POST",
      `/fragments/${fragmentWire(canvasId, fragmentId)}/transform`,
      { operator },
    );
  }

  dragOutFragment(canvasId: string, fragmentId: number): Promise<NodeRecord> {
    return this.request(
      "POST",
      `/fragments/${fragmentWire(canvasId, fragmentId)}/dragout`,
    );
  }

  merge(
    canvasId: string,
    items: Array<string | number>,
    operator?: MergeOperatorName,
  ): Promise<NodeRecord> {
    const body: Record<string, unknown> = { items };
    if (operator !== undefined) body.operator = operator;
    return this.request("POST", `/canvases/${canvasId}/merge`, body);
  }

  steer(
    canvasId: string,
    nodeId: string,
    x: number,
    y: number,
    k = 3,
    tau = 0.5,
  ): Promise<NodeRecord> {
    return this.request("POST", `/nodes/${nodeWire(canvasId, nodeId)}/steer`, {
      x,
      y,
      k,
      tau,
    });
  }

  addTheme(canvasId: string, title: string): Promise<{ themes: ThemeRecord[] }> {
    return this.request("POST", `/canvases/${canvasId}/themes`, { title });
  }

  autoThemes(canvasId: string, k: number): Promise<{ themes: ThemeRecord[] }> {
    return this.request("POST", `/canvases/${canvasId}/themes`, {
      auto: true,
      k,
    });
  }

  setMode(canvasId: string, mode: ModeName): Promise<{ mode: ModeName }> {
    return this.request("PUT", `/canvases/${canvasId}/mode`, { mode });
  }

  setZoom(canvasId: string, zoom: number): Promise<{ zoom: number }> {
    return this.request("PUT", `/canvases/${canvasId}/zoom`, { zoom });
  }

  setFilters(
    canvasId: string,
    levels?: number[],
    pillars?: PillarName[],
  ): Promise<FiltersRecord> {
    const body: Record<string, unknown> = {};
    if (levels !== undefined) body.levels = levels;
    if (pillars !== undefined) body.pillars = pillars;
    return this.request("PUT", `/canvases/${canvasId}/filters`, body);
  }

  getLayout(canvasId: string): Promise<LayoutRecord> {
    return this.request("GET", `/canvases/${canvasId}/layout`);
  }

  getEvents(canvasId: string): Promise<{ events: EventRecord[] }> {
    return this.request("GET", `/canvases/${canvasId}/events`);
  }

  getNodeView(
    canvasId: string,
    nodeId: string,
    zoom?: number,
  ): Promise<NodeViewRecord> {
    const suffix = zoom === undefined ? "" : `?zoom=${zoom}`;
    return this.request(
      "GET",
      `/nodes/${nodeWire(canvasId, nodeId)}/view${suffix}`,
    );
  }

  getRelated(
    canvasId: string,
    nodeId: string,
    k?: number,
  ): Promise<RelatedRecord> {
    const suffix = k === undefined ? "" : `?k=${k}`;
    return this.request(
      "GET",
      `/nodes/${nodeWire(canvasId, nodeId)}/related${suffix}`,
    );
  }

  getSnapshot(canvasId: string): Promise<SnapshotResponse> {
    return this.request("GET", `/canvases/${canvasId}/snapshot`);
  }

  restoreSnapshot(
    canvasId: string,
    snapshot: SnapshotResponse,
  ): Promise<CanvasRecord> {
    return this.request("POST", `/canvases/${canvasId}/snapshot`, snapshot);
  }

  getMetrics(canvasId: string, prompt?: string): Promise<MetricsReport> {
    const suffix =
      prompt === undefined ? "" : `?prompt=${encodeURIComponent(prompt)}`;
    return this.request("GET", `/canvases/${canvasId}/metrics${suffix}`);
  }
}
