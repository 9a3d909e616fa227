/**
 * End-to-end acceptance against a live service: spawns the Python server as
 * a child process and drives it through the view model exactly as the UI
 * would. Asserts the full flow — create, analyze (12 rows grouped by
 * level), drag-out, merge with mode pre-selection, cluster mode with three
 * themes, a steering drag that spawns a successor, and zoom 1→6 strictly
 * adding rendered detail — plus parity between client-side preview math and
 * the server's authoritative results.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, type FragmentRecord } from "../src/api.js";
import {
  detailKinds,
  fragmentGroups,
  nodeCard,
  visibleFragments,
} from "../src/render.js";
import { anchorLayout, steeringPreview } from "../src/steering.js";
import { CanvasViewModel } from "../src/viewmodel.js";

const PORT = 8700 + (process.pid % 229);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | undefined;
let api: ApiClient;
let vm: CanvasViewModel;
let seedNodeId: string; // the analyzed node, carries all 12 fragments
let mergedNodeId: string;

async function waitForService(): Promise<void> {
  const deadline = Date.now() + 45_000;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/canvases/nope`);
      if (res.status === 404) return; // routing is up and answering
    } catch {
      // connection refused; still booting
    }
    if (Date.now() > deadline) {
      throw new Error(`service on port ${PORT} did not come up in 45s`);
    }
    await new Promise((r) => setTimeout(r, 200));
  }
}

beforeAll(async () => {
  const env = { ...process.env };
  delete env.WHVCANVAS_BACKEND; // offline deterministic backend
  delete env.WHVCANVAS_API_TOKEN; // no auth for the test instance
  server = spawn(
    "python3",
    ["-m", "whvcanvas.cli", "serve", "--port", String(PORT)],
    { stdio: ["ignore", "ignore", "pipe"], env },
  );
  server.stderr?.on("data", () => {}); // drain so the child never blocks
  await waitForService();
  api = new ApiClient({ baseUrl: BASE });
  vm = await CanvasViewModel.open(api);
}, 60_000);

afterAll(() => {
  server?.kill();
});

function fragmentsOf(nodeId: string): FragmentRecord[] {
  const fragments = vm.node(nodeId)?.fragments;
  expect(fragments).not.toBeNull();
  return fragments as FragmentRecord[];
}

describe("live service flow", () => {
  it("creates a node on a fresh canvas", async () => {
    const node = await vm.createNode(
      "Night market",
      "A weekly evening street market where neighbors trade crafts, food, and repairs.",
    );
    seedNodeId = node.id;
    expect(vm.state.nodes).toHaveLength(1);
    expect(vm.node(seedNodeId)?.fragments).toBeNull();
    expect(vm.state.positions[seedNodeId]).toBeDefined();
  });

  it("analyze yields 12 fragment rows grouped L4 down to L1", async () => {
    await vm.analyzeNode(seedNodeId);
    const fragments = fragmentsOf(seedNodeId);
    expect(fragments).toHaveLength(12);

    const groups = fragmentGroups(fragments);
    expect(groups.map((g) => g.label)).toEqual([
      "Abstraction L4: 100%",
      "Abstraction L3: 75%",
      "Abstraction L2: 50%",
      "Abstraction L1: 25%",
    ]);
    for (const group of groups) {
      expect(group.rows.map((r) => r.pillar)).toEqual(["what", "how", "value"]);
    }
    const ids = groups.flatMap((g) => g.rows.map((r) => r.id));
    expect(new Set(ids).size).toBe(12);
  });

  it("dragging out a fragment creates a new linked node", async () => {
    const fragment = fragmentsOf(seedNodeId).find(
      (f) => f.level === 50 && f.pillar === "what",
    ) as FragmentRecord;
    const child = await vm.dragOutFragment(fragment.id);
    expect(child.parent_links).toEqual([
      { parent_id: seedNodeId, kind: "dragout" },
    ]);
    expect(vm.state.nodes).toHaveLength(2);
    expect(child.title).toBe(fragment.title);
  });

  it("merges two fragments with the detected mode offered first", async () => {
    const fragments = fragmentsOf(seedNodeId);
    const how75 = fragments.find((f) => f.pillar === "how" && f.level === 75);
    const value100 = fragments.find(
      (f) => f.pillar === "value" && f.level === 100,
    );
    expect(how75).toBeDefined();
    expect(value100).toBeDefined();

    vm.toggleSelect({
      kind: "fragment",
      nodeId: seedNodeId,
      fragmentId: (how75 as FragmentRecord).id,
    });
    vm.toggleSelect({
      kind: "fragment",
      nodeId: seedNodeId,
      fragmentId: (value100 as FragmentRecord).id,
    });
    expect(vm.mergeEnabled).toBe(true);

    const choices = vm.mergeChoices();
    expect(choices.detectedMode).toBe("Brainstorm");
    expect(choices.modes[0]).toBe("Brainstorm");
    expect(choices.modes).toHaveLength(4);
    expect(choices.suggestedOperator).toBe("Op_HV");

    const merged = await vm.mergeSelected();
    mergedNodeId = merged.id;
    expect(vm.selection).toHaveLength(0);
    expect(merged.parent_links.every((l) => l.kind === "merge")).toBe(true);
    expect(merged.parent_links.some((l) => l.parent_id === seedNodeId)).toBe(
      true,
    );

    // The server detected the same mode the client pre-selected; a detected
    // mode supersedes operator inference, so the operator is recorded null.
    const { events } = await api.getEvents(vm.canvasId);
    const mergeEvent = [...events].reverse().find((e) => e.kind === "merge");
    expect(mergeEvent?.payload.mode).toBe("Brainstorm");
    expect(mergeEvent?.payload.operator).toBeNull();
  });

  it("enters cluster mode with three themes whose anchors match the client's", async () => {
    await vm.addTheme("Community");
    await vm.addTheme("Logistics");
    await vm.addTheme("Economy");
    await vm.setMode("cluster");
    expect(vm.state.mode).toBe("cluster");
    expect(vm.state.themes).toHaveLength(3);

    const layout = await api.getLayout(vm.canvasId);
    expect(layout.mode).toBe("cluster");
    expect(Object.keys(layout.anchors)).toHaveLength(3);

    const client = anchorLayout(
      vm.state.themes.map((t) => ({ id: t.id, title: t.title })),
    );
    for (const anchor of client) {
      const serverAnchor = layout.anchors[anchor.themeId];
      expect(serverAnchor).toBeDefined();
      const [sx, sy] = serverAnchor as [number, number];
      expect(anchor.x).toBeCloseTo(sx, 9);
      expect(anchor.y).toBeCloseTo(sy, 9);
    }
  });

  it("steering drag previews weights and spawns a successor on release", async () => {
    const drop: [number, number] = [0.35, 0.55];

    vm.beginDrag(mergedNodeId, 0, 0);
    vm.moveDrag(drop[0], drop[1]);
    const preview = vm.drag?.preview ?? [];
    expect(preview).toHaveLength(3);
    const total = preview.reduce((acc, row) => acc + row.weight, 0);
    expect(total).toBeCloseTo(1, 12);

    const successor = await vm.endDrag(drop[0], drop[1]);
    expect(successor).not.toBeNull();
    expect(successor?.parent_links).toEqual([
      { parent_id: mergedNodeId, kind: "steer" },
    ]);
    expect(vm.node(successor?.id as string)).toBeDefined();
    expect(vm.state.positions[successor?.id as string]).toEqual(drop);

    // The live preview shown during the drag matches the weights the
    // server actually used, row for row.
    const { events } = await api.getEvents(vm.canvasId);
    const steerEvent = [...events].reverse().find((e) => e.kind === "steer");
    expect(steerEvent).toBeDefined();
    const payload = steerEvent?.payload as {
      primary: string;
      weights: Array<[string, number]>;
      at_position: [number, number];
      k: number;
      tau: number;
    };
    expect(payload.at_position).toEqual(drop);
    expect(payload.k).toBe(3);
    expect(payload.tau).toBe(0.5);
    expect(payload.primary).toBe(preview[0]?.title);
    expect(payload.weights).toHaveLength(preview.length);
    payload.weights.forEach(([title, weight], i) => {
      expect(title).toBe(preview[i]?.title);
      expect(weight).toBeCloseTo(preview[i]?.weight as number, 9);
    });
  });

  it("raising zoom from 1 to 6 strictly adds rendered detail", async () => {
    let previous = new Set<string>();
    for (let zoom = 1; zoom <= 6; zoom += 1) {
      const view = await api.getNodeView(vm.canvasId, seedNodeId, zoom);
      const kinds = detailKinds(nodeCard(view));
      if (zoom === 1) {
        expect(kinds).toEqual(new Set(["dot"]));
      }
      expect(kinds.size).toBeGreaterThan(previous.size);
      for (const kind of previous) {
        expect(kinds.has(kind)).toBe(true);
      }
      previous = kinds;
    }
    expect(previous).toEqual(
      new Set([
        "dot",
        "title",
        "preview",
        "fragment_titles",
        "fragment_contents",
        "provenance",
      ]),
    );
  });

  it("applies filters identically on client and server", async () => {
    await vm.setFilters([75], ["how"]);

    const view = await api.getNodeView(vm.canvasId, seedNodeId, 4);
    const serverIds = (view.fragment_titles ?? []).map((r) => r.id).sort();
    const clientIds = visibleFragments(fragmentsOf(seedNodeId), vm.state.filters)
      .map((f) => f.id)
      .sort();
    expect(serverIds).toEqual(clientIds);
    expect(serverIds).toHaveLength(1);

    await vm.setFilters([], []);
  });

  it("mirrors the canvas exactly as the server reports it", async () => {
    const fresh = await api.getCanvas(vm.canvasId);
    expect(vm.state).toEqual(fresh);
  });
});
