/**
 * Single-page bootstrap. Builds the toolbar, canvas surface, merge bar, and
 * related-nodes panel, and wires them to a CanvasViewModel. All rendering
 * goes through the pure helpers in render.ts; all state changes go through
 * the view model, so nothing on screen can disagree with the server for
 * longer than one refresh.
 */

import { ApiClient, ApiError, type PillarName } from "./api.js";
import { detailKinds, fragmentGroups, nodeCard, nodeRadius } from "./render.js";
import { anchorLayout } from "./steering.js";
import { BusyError, CanvasViewModel } from "./viewmodel.js";

const SCALE = 280; // canvas units are [-1, 1]; px per unit
const LEVELS = [100, 75, 50, 25] as const;
const PILLARS: PillarName[] = ["what", "how", "value"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function toast(message: string): void {
  const region = document.getElementById("whv-toasts");
  if (!region) return;
  const item = el("div", "toast", message);
  region.appendChild(item);
  setTimeout(() => item.remove(), 4000);
}

async function guarded(action: () => Promise<unknown>): Promise<void> {
  try {
    await action();
  } catch (err) {
    if (err instanceof ApiError) {
      toast(err.detail);
    } else if (err instanceof BusyError) {
      toast("previous request still running");
    } else {
      throw err;
    }
  }
}

class App {
  private surface: HTMLElement;
  private sidebar: HTMLElement;
  private mergeBar: HTMLElement;
  private zoom = 1;
  private activeLevels = new Set<number>();
  private activePillars = new Set<PillarName>();

  constructor(
    private readonly root: HTMLElement,
    private readonly vm: CanvasViewModel,
    private readonly api: ApiClient,
  ) {
    this.surface = el("div", "surface");
    this.sidebar = el("aside", "sidebar");
    this.mergeBar = el("div", "merge-bar");
    root.append(this.buildToolbar(), this.surface, this.sidebar, this.mergeBar);
    const toasts = el("div");
    toasts.id = "whv-toasts";
    root.appendChild(toasts);
    this.wireDrag();
  }

  private buildToolbar(): HTMLElement {
    const bar = el("header", "toolbar");

    const title = el("input");
    title.placeholder = "idea title";
    const content = el("input");
    content.placeholder = "describe the idea";
    const add = el("button", "", "Add node");
    add.onclick = () =>
      guarded(async () => {
        if (!title.value.trim()) return;
        await this.vm.createNode(title.value, content.value);
        title.value = "";
        content.value = "";
        await this.redraw();
      });

    const zoom = el("input");
    zoom.type = "range";
    zoom.min = "1";
    zoom.max = "6";
    zoom.step = "1";
    zoom.value = "1";
    zoom.oninput = () =>
      guarded(async () => {
        this.zoom = Number(zoom.value);
        await this.vm.setZoom(this.zoom);
        await this.redraw();
      });

    const mode = el("button", "", "Cluster view");
    mode.onclick = () =>
      guarded(async () => {
        const next = this.vm.state.mode === "cluster" ? "default" : "cluster";
        await this.vm.setMode(next);
        mode.textContent = next === "cluster" ? "Default view" : "Cluster view";
        await this.redraw();
      });

    const themeInput = el("input");
    themeInput.placeholder = "new theme";
    const themeAdd = el("button", "", "Add theme");
    themeAdd.onclick = () =>
      guarded(async () => {
        if (!themeInput.value.trim()) return;
        await this.vm.addTheme(themeInput.value);
        themeInput.value = "";
        await this.redraw();
      });

    const chips = el("div", "chips");
    for (const level of LEVELS) {
      chips.appendChild(this.chip(`L${4 - LEVELS.indexOf(level)}`, () => {
        if (this.activeLevels.has(level)) this.activeLevels.delete(level);
        else this.activeLevels.add(level);
        return this.pushFilters();
      }));
    }
    for (const pillar of PILLARS) {
      chips.appendChild(this.chip(pillar, () => {
        if (this.activePillars.has(pillar)) this.activePillars.delete(pillar);
        else this.activePillars.add(pillar);
        return this.pushFilters();
      }));
    }

    bar.append(title, content, add, zoom, mode, themeInput, themeAdd, chips);
    return bar;
  }

  private chip(label: string, toggle: () => Promise<void>): HTMLElement {
    const button = el("button", "chip", label);
    button.onclick = () =>
      guarded(async () => {
        button.classList.toggle("active");
        await toggle();
      });
    return button;
  }

  private pushFilters(): Promise<void> {
    return guarded(async () => {
      await this.vm.setFilters([...this.activeLevels], [...this.activePillars]);
      await this.redraw();
    });
  }

  private wireDrag(): void {
    let dragging = false;
    this.surface.addEventListener("mousedown", (event) => {
      const target = (event.target as HTMLElement).closest("[data-node]");
      if (!target) return;
      const nodeId = target.getAttribute("data-node") as string;
      const [x, y] = this.toUnits(event);
      this.vm.beginDrag(nodeId, x, y);
      dragging = true;
    });
    this.surface.addEventListener("mousemove", (event) => {
      if (!dragging) return;
      const [x, y] = this.toUnits(event);
      this.vm.moveDrag(x, y);
      this.renderDragPreview();
    });
    this.surface.addEventListener("mouseup", (event) => {
      if (!dragging) return;
      dragging = false;
      const [x, y] = this.toUnits(event);
      guarded(async () => {
        await this.vm.endDrag(x, y);
        await this.redraw();
      });
    });
  }

  private toUnits(event: MouseEvent): [number, number] {
    const rect = this.surface.getBoundingClientRect();
    const x = (event.clientX - rect.left - rect.width / 2) / SCALE;
    const y = -(event.clientY - rect.top - rect.height / 2) / SCALE;
    return [x, y];
  }

  private toPx(x: number, y: number): [number, number] {
    const rect = this.surface.getBoundingClientRect();
    return [rect.width / 2 + x * SCALE, rect.height / 2 - y * SCALE];
  }

  private renderDragPreview(): void {
    let overlay = this.surface.querySelector<HTMLElement>(".drag-preview");
    if (this.vm.drag === null || this.vm.drag.preview.length === 0) {
      overlay?.remove();
      return;
    }
    if (!overlay) {
      overlay = el("div", "drag-preview");
      this.surface.appendChild(overlay);
    }
    const [px, py] = this.toPx(this.vm.drag.x, this.vm.drag.y);
    overlay.style.left = `${px}px`;
    overlay.style.top = `${py}px`;
    overlay.replaceChildren(
      ...this.vm.drag.preview.map((row) =>
        el("div", "", `${row.title} ${(row.weight * 100).toFixed(0)}%`),
      ),
    );
  }

  async redraw(): Promise<void> {
    await this.vm.refresh();
    const state = this.vm.state;
    this.surface.replaceChildren();

    if (state.mode === "cluster") {
      const anchors = anchorLayout(
        state.themes.map((t) => ({ id: t.id, title: t.title })),
      );
      for (const anchor of anchors) {
        const marker = el("div", "anchor", anchor.title);
        const [px, py] = this.toPx(anchor.x, anchor.y);
        marker.style.left = `${px}px`;
        marker.style.top = `${py}px`;
        this.surface.appendChild(marker);
      }
    }

    for (const node of state.nodes) {
      const view = await this.api.getNodeView(state.id, node.id, this.zoom);
      const card = nodeCard(view);
      const element = el("div", "node-card");
      element.setAttribute("data-node", card.id);
      const [x, y] = this.vm.displayPosition(card.id);
      const [px, py] = this.toPx(x, y);
      element.style.left = `${px}px`;
      element.style.top = `${py}px`;

      const dot = el("div", "dot");
      const radius = nodeRadius(view.size ?? 1);
      dot.style.width = `${radius * 2}px`;
      dot.style.height = `${radius * 2}px`;
      element.appendChild(dot);

      if (card.title !== undefined) {
        const heading = el("div", "title", card.title);
        heading.onclick = () => {
          this.vm.toggleSelect({ kind: "node", nodeId: card.id });
          this.renderMergeBar();
          void this.renderSidebar(card.id);
        };
        element.appendChild(heading);
      }
      if (card.preview !== undefined) {
        element.appendChild(el("div", "preview", card.preview));
      }
      for (const group of card.groups ?? []) {
        const section = el("section", "level-group");
        section.appendChild(el("h4", "", group.label));
        for (const row of group.rows) {
          const rowEl = el(
            "div",
            `fragment ${row.pillar}`,
            row.content === undefined
              ? `${row.pillar}: ${row.title}`
              : `${row.pillar}: ${row.title} — ${row.content}`,
          );
          rowEl.draggable = true;
          rowEl.onclick = () => {
            this.vm.toggleSelect({
              kind: "fragment",
              nodeId: card.id,
              fragmentId: row.id,
            });
            this.renderMergeBar();
          };
          rowEl.ondragend = () =>
            guarded(async () => {
              await this.vm.dragOutFragment(row.id);
              await this.redraw();
            });
          section.appendChild(rowEl);
        }
        element.appendChild(section);
      }
      if (card.provenance !== undefined) {
        const prov = el(
          "div",
          "provenance",
          card.provenance.parents
            .map((p) => `${p.kind} of ${p.parent_id}`)
            .join(", "),
        );
        element.appendChild(prov);
      }
      this.surface.appendChild(element);
    }
    this.renderMergeBar();
  }

  private renderMergeBar(): void {
    this.mergeBar.replaceChildren();
    const count = el("span", "", `${this.vm.selection.length} selected`);
    this.mergeBar.appendChild(count);
    if (!this.vm.mergeEnabled) return;

    const choices = this.vm.mergeChoices();
    const picker = el("select");
    for (const mode of choices.modes) {
      picker.appendChild(el("option", "", mode));
    }
    const button = el("button", "", `Merge (${choices.suggestedOperator})`);
    button.onclick = () =>
      guarded(async () => {
        await this.vm.mergeSelected(choices.suggestedOperator);
        await this.redraw();
      });
    this.mergeBar.append(picker, button);
  }

  private async renderSidebar(nodeId: string): Promise<void> {
    const related = await this.api.getRelated(this.vm.canvasId, nodeId);
    this.sidebar.replaceChildren(el("h3", "", "Related"));
    for (const [label, rows] of [
      ["Similar", related.similar],
      ["Dissimilar", related.dissimilar],
      ["Case studies", related.cases],
    ] as const) {
      this.sidebar.appendChild(el("h4", "", label));
      for (const row of rows) {
        this.sidebar.appendChild(
          el("div", "related-row", `${row.id} (${row.similarity.toFixed(2)})`),
        );
      }
    }
  }
}

export async function bootstrap(root: HTMLElement): Promise<App> {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient({
    baseUrl: params.get("api") ?? "http://127.0.0.1:8714",
    token: params.get("token") ?? undefined,
  });
  const vm = await CanvasViewModel.open(api, params.get("canvas") ?? undefined);
  const app = new App(root, vm, api);
  await app.redraw();
  return app;
}

// Boot only in a browser; the module must stay importable without a DOM.
if (typeof document !== "undefined") {
  const rootElement = document.getElementById("whv-root");
  if (rootElement !== null) {
    void bootstrap(rootElement);
  }
}
