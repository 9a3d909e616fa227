/**
 * Pure view-model functions: what a node card shows at a given zoom, which
 * fragments survive the active filters, and how rows are grouped and
 * labelled. No DOM here; app.ts turns these structures into elements and
 * the tests assert on them directly.
 */

import type {
  FiltersRecord,
  FragmentRecord,
  LevelPercent,
  NodeViewRecord,
  ParentLinkRecord,
  PillarName,
  TransformEdgeRecord,
} from "./api.js";

export const MIN_ZOOM = 1;
export const MAX_ZOOM = 6;

/** Cumulative field sets; step z renders everything steps 1..z introduce. */
const ZOOM_STEPS: ReadonlyArray<ReadonlyArray<string>> = [
  ["position", "size"],
  ["title"],
  ["content_preview"],
  ["fragment_titles"],
  ["fragment_contents"],
  ["provenance"],
];

export function fieldsAtZoom(zoom: number): Set<string> {
  if (!Number.isInteger(zoom) || zoom < MIN_ZOOM || zoom > MAX_ZOOM) {
    throw new RangeError(`zoom must be an integer in [1, 6], got ${zoom}`);
  }
  const fields = new Set<string>();
  for (const step of ZOOM_STEPS.slice(0, zoom)) {
    for (const field of step) fields.add(field);
  }
  return fields;
}

/** Empty filter lists mean "show everything"; both axes must match. */
export function fragmentVisible(
  fragment: { level: number; pillar: PillarName },
  filters: FiltersRecord,
): boolean {
  if (filters.levels.length > 0 && !filters.levels.includes(fragment.level)) {
    return false;
  }
  if (
    filters.pillars.length > 0 &&
    !filters.pillars.includes(fragment.pillar)
  ) {
    return false;
  }
  return true;
}

export function visibleFragments(
  fragments: FragmentRecord[],
  filters: FiltersRecord,
): FragmentRecord[] {
  return fragments.filter((f) => fragmentVisible(f, filters));
}

const LEVEL_ORDER: readonly LevelPercent[] = [100, 75, 50, 25];
const LEVEL_NAMES: Record<LevelPercent, string> = {
  100: "L4",
  75: "L3",
  50: "L2",
  25: "L1",
};

export function levelLabel(level: LevelPercent): string {
  return `Abstraction ${LEVEL_NAMES[level]}: ${level}%`;
}

export interface FragmentRow {
  id: number;
  pillar: PillarName;
  title: string;
  content?: string;
}

export interface LevelGroup {
  level: LevelPercent;
  label: string;
  rows: FragmentRow[];
}

/**
 * Fragment rows grouped by abstraction level, most abstract first, with
 * rows inside a group in what/how/value order. Groups emptied by the
 * filters are dropped entirely.
 */
export function fragmentGroups(
  fragments: FragmentRecord[],
  filters: FiltersRecord = { levels: [], pillars: [] },
): LevelGroup[] {
  const pillarRank: Record<PillarName, number> = { what: 0, how: 1, value: 2 };
  const groups: LevelGroup[] = [];
  for (const level of LEVEL_ORDER) {
    const rows = visibleFragments(fragments, filters)
      .filter((f) => f.level === level)
      .sort((a, b) => pillarRank[a.pillar] - pillarRank[b.pillar])
      .map((f) => ({
        id: f.id,
        pillar: f.pillar,
        title: f.title,
        content: f.content,
      }));
    if (rows.length > 0) {
      groups.push({ level, label: levelLabel(level), rows });
    }
  }
  return groups;
}

/** Everything a node card can render; presence tracks the zoom contract. */
export interface NodeCardModel {
  id: string;
  dot: { x: number; y: number; radius: number };
  title?: string;
  preview?: string;
  groups?: LevelGroup[];
  provenance?: {
    parents: ParentLinkRecord[];
    transformEdges: TransformEdgeRecord[];
  };
}

const BASE_RADIUS_PX = 14;

/** Node dot radius in pixels; the server's interest-driven size scales it. */
export function nodeRadius(size: number): number {
  return BASE_RADIUS_PX * size;
}

/**
 * Card model from a server node view. The server already gated fields by
 * zoom and filtered fragment rows, so this only reshapes: title rows and
 * content rows join by fragment id, grouped by level.
 */
export function nodeCard(view: NodeViewRecord): NodeCardModel {
  const [x, y] = view.position ?? [0, 0];
  const card: NodeCardModel = {
    id: view.id,
    dot: { x, y, radius: nodeRadius(view.size ?? 1) },
  };
  if (view.title !== undefined) card.title = view.title;
  if (view.content_preview !== undefined) card.preview = view.content_preview;
  if (view.fragment_titles !== undefined) {
    const contentById = new Map(
      (view.fragment_contents ?? []).map((row) => [row.id, row.content]),
    );
    const fragments: FragmentRecord[] = view.fragment_titles.map((row) => ({
      id: row.id,
      level: row.level,
      pillar: row.pillar,
      title: row.title,
      content: contentById.get(row.id) ?? "",
    }));
    const groups = fragmentGroups(fragments);
    if (view.fragment_contents === undefined) {
      for (const group of groups) {
        for (const row of group.rows) delete row.content;
      }
    }
    card.groups = groups;
  }
  if (view.provenance !== undefined) {
    card.provenance = {
      parents: view.provenance.parents,
      transformEdges: view.provenance.transform_edges,
    };
  }
  return card;
}

/**
 * The distinct kinds of detail a card model renders. Used to check that
 * raising zoom strictly adds detail and never swaps it.
 */
export function detailKinds(card: NodeCardModel): Set<string> {
  const kinds = new Set<string>(["dot"]);
  if (card.title !== undefined) kinds.add("title");
  if (card.preview !== undefined) kinds.add("preview");
  if (card.groups !== undefined) kinds.add("fragment_titles");
  if (card.groups?.some((g) => g.rows.some((r) => r.content !== undefined))) {
    kinds.add("fragment_contents");
  }
  if (card.provenance !== undefined) kinds.add("provenance");
  return kinds;
}
