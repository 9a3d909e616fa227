/**
 * Client-side mirror of one canvas.
 *
 * The server is the source of truth: nothing here writes to the mirrored
 * state except the commit step that runs after a successful API response,
 * and every mutation is followed by a full refresh so derived server state
 * (positions, sizes, event counters) is never approximated locally. One
 * mutating request may be in flight per canvas; a second attempt while one
 * is pending throws BusyError instead of queueing, which keeps the UI's
 * spinner semantics honest.
 *
 * Transient UI state (selection, drag previews, default-mode repositioning)
 * lives beside the mirror and never masquerades as canvas state.
 */

import {
  ApiClient,
  type CanvasRecord,
  type FragmentRecord,
  type MergeOperatorName,
  type ModeName,
  type NodeRecord,
  type PillarName,
  type TargetedModeName,
} from "./api.js";
import {
  anchorLayout,
  steeringPreview,
  type ThemeAnchor,
  type ThemeWeight,
} from "./steering.js";

export class BusyError extends Error {
  constructor(pending: string) {
    super(`a "${pending}" request is already in flight for this canvas`);
    this.name = "BusyError";
  }
}

export interface Selected {
  kind: "node" | "fragment";
  nodeId: string;
  fragmentId?: number;
}

const ALL_MODES: readonly TargetedModeName[] = [
  "Brainstorm",
  "ExperimentalInnovation",
  "FutureVision",
  "ProductConcept",
];

/**
 * Mirror of the server's targeted-mode table: an exact match on the sorted
 * multiset of (pillar, level) pairs, Brainstorm checked first so the
 * (how 75, value 100) pair resolves to it.
 */
export function detectMergeMode(
  fragments: Array<{ pillar: PillarName; level: number }>,
): TargetedModeName | null {
  const pairs = fragments
    .map((f) => `${f.pillar}:${f.level}`)
    .sort()
    .join(",");
  if (pairs === "how:75,value:100") return "Brainstorm";
  if (pairs === "how:75,value:75") return "ExperimentalInnovation";
  if (pairs === "how:100,value:100") return "FutureVision";
  if (pairs === "how:50,how:50") return "ProductConcept";
  return null;
}

/** Mirror of the server's operator inference from the distinct pillar set. */
export function inferOperator(pillars: PillarName[]): MergeOperatorName {
  const distinct = new Set(pillars);
  const has = (p: PillarName) => distinct.has(p);
  if (distinct.size === 2 && has("what") && has("how")) return "Op_WH";
  if (distinct.size === 2 && has("value") && has("what")) return "Op_VW";
  if (distinct.size === 2 && has("how") && has("value")) return "Op_HV";
  return "Op_WHV";
}

export interface MergeChoices {
  /** All four targeted modes, the detected one first. */
  modes: TargetedModeName[];
  detectedMode: TargetedModeName | null;
  suggestedOperator: MergeOperatorName;
}

export interface DragState {
  nodeId: string;
  x: number;
  y: number;
  preview: ThemeWeight[];
}

export class CanvasViewModel {
  private mirror: CanvasRecord | null = null;
  private pendingOp: string | null = null;

  selection: Selected[] = [];
  drag: DragState | null = null;
  /** Navigation-mode repositioning; display-only, never sent anywhere. */
  localOffsets = new Map<string, [number, number]>();

  constructor(
    private readonly api: ApiClient,
    readonly canvasId: string,
  ) {}

  static async open(api: ApiClient, canvasId?: string): Promise<CanvasViewModel> {
    const record =
      canvasId === undefined
        ? await api.createCanvas()
        : await api.getCanvas(canvasId);
    const vm = new CanvasViewModel(api, record.id);
    vm.mirror = record;
    return vm;
  }

  get state(): CanvasRecord {
    if (this.mirror === null) {
      throw new Error("view model not initialized; use CanvasViewModel.open");
    }
    return this.mirror;
  }

  get pending(): string | null {
    return this.pendingOp;
  }

  node(nodeId: string): NodeRecord | undefined {
    return this.state.nodes.find((n) => n.id === nodeId);
  }

  fragment(fragmentId: number): FragmentRecord | undefined {
    for (const node of this.state.nodes) {
      const hit = node.fragments?.find((f) => f.id === fragmentId);
      if (hit) return hit;
    }
    return undefined;
  }

  async refresh(): Promise<CanvasRecord> {
    const record = await this.api.getCanvas(this.canvasId);
    this.mirror = record;
    return record;
  }

  /**
   * Serialize mutations and commit only on acknowledgment. The mirror is
   * untouched until the request resolves; a rejection leaves every piece of
   * local state (including the selection) exactly as it was.
   */
  private async mutate<T>(name: string, call: () => Promise<T>): Promise<T> {
    if (this.pendingOp !== null) throw new BusyError(this.pendingOp);
    this.pendingOp = name;
    try {
      const result = await call();
      await this.refresh();
      return result;
    } finally {
      this.pendingOp = null;
    }
  }

  createNode(title: string, content: string): Promise<NodeRecord> {
    return this.mutate("create_node", () =>
      this.api.createNode(this.canvasId, title, content),
    );
  }

  analyzeNode(nodeId: string): Promise<NodeRecord> {
    return this.mutate("analyze", () =>
      this.api.analyzeNode(this.canvasId, nodeId),
    );
  }

  transformNode(nodeId: string, k = 5) {
    return this.mutate("transform", () =>
      this.api.transformNode(this.canvasId, nodeId, k),
    );
  }

  dragOutFragment(fragmentId: number): Promise<NodeRecord> {
    return this.mutate("dragout", () =>
      this.api.dragOutFragment(this.canvasId, fragmentId),
    );
  }

  addTheme(title: string) {
    return this.mutate("add_theme", () =>
      this.api.addTheme(this.canvasId, title),
    );
  }

  setMode(mode: ModeName) {
    return this.mutate("set_mode", () => this.api.setMode(this.canvasId, mode));
  }

  setZoom(zoom: number) {
    return this.mutate("set_zoom", () => this.api.setZoom(this.canvasId, zoom));
  }

  setFilters(levels?: number[], pillars?: PillarName[]) {
    return this.mutate("set_filters", () =>
      this.api.setFilters(this.canvasId, levels, pillars),
    );
  }

  // -- selection and merge --------------------------------------------------

  toggleSelect(item: Selected): void {
    const key = (s: Selected) => `${s.kind}:${s.nodeId}:${s.fragmentId ?? ""}`;
    const existing = this.selection.findIndex((s) => key(s) === key(item));
    if (existing >= 0) {
      this.selection.splice(existing, 1);
    } else {
      this.selection.push(item);
    }
  }

  clearSelection(): void {
    this.selection = [];
  }

  /** The merge action is offered only for a selection of exactly two. */
  get mergeEnabled(): boolean {
    return this.selection.length === 2;
  }

  mergeChoices(): MergeChoices {
    if (!this.mergeEnabled) {
      throw new Error("merge choices need exactly two selected items");
    }
    const fragments = this.selection
      .filter((s) => s.kind === "fragment")
      .map((s) => this.fragment(s.fragmentId as number))
      .filter((f): f is FragmentRecord => f !== undefined);
    const detected =
      fragments.length === 2 ? detectMergeMode(fragments) : null;
    const modes = [
      ...(detected === null ? [] : [detected]),
      ...ALL_MODES.filter((m) => m !== detected),
    ];
    const suggestedOperator =
      fragments.length === 2
        ? inferOperator(fragments.map((f) => f.pillar))
        : "Op_WHV";
    return { modes, detectedMode: detected, suggestedOperator };
  }

  /** Merge the two selected items; the selection survives a failure. */
  async mergeSelected(operator?: MergeOperatorName): Promise<NodeRecord> {
    if (!this.mergeEnabled) {
      throw new Error("merge needs exactly two selected items");
    }
    const items = this.selection.map((s) =>
      s.kind === "node" ? s.nodeId : (s.fragmentId as number),
    );
    const node = await this.mutate("merge", () =>
      this.api.merge(this.canvasId, items, operator),
    );
    this.selection = [];
    return node;
  }

  // -- steering drag ----------------------------------------------------------

  private themeAnchors(): ThemeAnchor[] {
    return anchorLayout(
      this.state.themes.map((t) => ({ id: t.id, title: t.title })),
    );
  }

  beginDrag(nodeId: string, x: number, y: number): void {
    this.drag = { nodeId, x, y, preview: this.previewAt(x, y) };
  }

  moveDrag(x: number, y: number): void {
    if (this.drag === null) return;
    this.drag = { ...this.drag, x, y, preview: this.previewAt(x, y) };
  }

  /** K-nearest theme weights for an in-progress drag; empty outside cluster mode. */
  previewAt(x: number, y: number, k = 3, tau = 0.5): ThemeWeight[] {
    if (this.state.mode !== "cluster" || this.state.themes.length === 0) {
      return [];
    }
    return steeringPreview(x, y, this.themeAnchors(), k, tau);
  }

  /**
   * Release the drag. Cluster mode posts a steer and renders the successor;
   * default mode is plain navigation, so the position change stays local
   * and no request is made.
   */
  async endDrag(
    x: number,
    y: number,
    k = 3,
    tau = 0.5,
  ): Promise<NodeRecord | null> {
    if (this.drag === null) return null;
    const nodeId = this.drag.nodeId;
    this.drag = null;
    if (this.state.mode !== "cluster") {
      this.localOffsets.set(nodeId, [x, y]);
      return null;
    }
    return this.mutate("steer", () =>
      this.api.steer(this.canvasId, nodeId, x, y, k, tau),
    );
  }

  /** Rendered position: server truth unless navigation moved it locally. */
  displayPosition(nodeId: string): [number, number] {
    const local = this.localOffsets.get(nodeId);
    if (local !== undefined && this.state.mode !== "cluster") return local;
    return this.state.positions[nodeId] ?? [0, 0];
  }
}
