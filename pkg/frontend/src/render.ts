// DOM rendering for the cluster review grid; all state lives in the store.

import { ClusterNode } from "./api.js";
import { ReviewStore } from "./store.js";

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

function purityBadge(node: ClusterNode): HTMLElement {
  const badge = el("span", "badge");
  if (node.purity === null) {
    badge.textContent = "purity n/a";
    badge.classList.add("badge-muted");
  } else {
    badge.textContent = `purity ${(100 * node.purity).toFixed(1)}%`;
    badge.classList.add(node.purity >= 0.9 ? "badge-good" : "badge-warn");
  }
  return badge;
}

function thumbnailGrid(store: ReviewStore, node: ClusterNode): HTMLElement {
  const grid = el("div", "thumbs");
  const samples = store.samples.get(node.id);
  if (!samples) {
    grid.append(el("div", "thumbs-empty", "loading tiles..."));
    void store.loadSamples(node.id);
    return grid;
  }
  for (const tile of samples.tiles) {
    const img = el("img", "thumb");
    img.loading = "lazy"; // placeholders render server-side for missing files
    img.src = tile.url;
    img.title = tile.tile_id + (tile.label ? ` (${tile.label})` : "");
    grid.append(img);
  }
  return grid;
}

function card(store: ReviewStore, node: ClusterNode): HTMLElement {
  const box = el("div", "card");
  box.dataset.nodeId = String(node.id);
  const head = el("div", "card-head");
  head.append(el("strong", undefined, `cluster ${node.id}`));
  head.append(el("span", "size", `${node.size} tiles`));
  head.append(purityBadge(node));
  box.append(head);
  box.append(thumbnailGrid(store, node));

  const controls = el("div", "controls");
  const labelSelect = el("select", "label-select");
  labelSelect.append(new Option("label as...", "", true, true));
  for (const label of store.labels) labelSelect.append(new Option(label, label));
  labelSelect.onchange = () => {
    if (labelSelect.value) void store.label(node.id, labelSelect.value);
  };
  controls.append(labelSelect);

  const splitButton = el("button", "split", "split k=4");
  splitButton.disabled = node.label !== null; // mirrors the server rule
  splitButton.onclick = () => void store.split(node.id, 4);
  controls.append(splitButton);

  const resampleButton = el("button", "resample", "resample");
  resampleButton.onclick = () => void store.resample(node.id);
  controls.append(resampleButton);
  box.append(controls);
  return box;
}

function labeledRow(store: ReviewStore, node: ClusterNode): HTMLElement {
  const row = el("div", "labeled-row");
  row.append(el("span", undefined, `cluster ${node.id}: `));
  row.append(el("strong", undefined, node.label ?? ""));
  row.append(el("span", "size", ` (${node.size} tiles)`));
  const undo = el("button", "relabel", "relabel");
  undo.onclick = () => {
    const next = window.prompt("new label", node.label ?? "");
    if (next) void store.label(node.id, next);
  };
  row.append(undo);
  return row;
}

export function render(root: HTMLElement, store: ReviewStore): void {
  root.replaceChildren();

  if (!store.connected) {
    const banner = el("div", "banner", `connection lost: ${store.lastError ?? "server unreachable"}`);
    root.append(banner);
  }

  const header = el("header");
  header.append(el("h1", undefined, "histokit review"));
  header.append(
    el(
      "div",
      "meta",
      `${store.nTiles} tiles, revision ${store.revision}, ` +
        `${store.actionableCards().length} clusters to review`,
    ),
  );
  root.append(header);

  const grid = el("div", "grid");
  for (const node of store.actionableCards()) grid.append(card(store, node));
  root.append(grid);

  const labeled = store.labeledCards();
  if (labeled.length) {
    const section = el("section", "labeled");
    section.append(el("h2", undefined, "labeled clusters"));
    for (const node of labeled) section.append(labeledRow(store, node));
    root.append(section);
  }

  const historyPane = el("section", "history");
  historyPane.append(el("h2", undefined, "history"));
  for (const entry of [...store.history].reverse().slice(0, 50)) {
    historyPane.append(
      el(
        "div",
        `history-entry history-${entry.status}`,
        `${entry.at} ${entry.action} node ${entry.nodeId}: ${entry.detail}`,
      ),
    );
  }
  root.append(historyPane);
}
