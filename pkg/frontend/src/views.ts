// DOM rendering. Every view is a plain function of server data; the board
// shows exactly the lifecycle states the stream delivered.

import type { ConsoleStore, RequestView, SeriesRow } from "./store.js";
import type { AuditRow, MeasurementRecord, TopologyDoc } from "./types.js";

const KIND_COLORS: Record<string, string> = {
  QNode: "#2f7ed8",
  EPS: "#8a2be2",
  BSMNode: "#d84f2f",
  OpticalSwitch: "#4f7d4f",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(value: number | null | undefined, digits = 3): string {
  if (value === null || value === undefined) return "–";
  if (!Number.isFinite(value)) return "∞";
  return value.toFixed(digits);
}

// -- request board ------------------------------------------------------------

export function renderBoard(root: HTMLElement, store: ConsoleStore,
                            onSelect: (id: string) => void): void {
  root.replaceChildren();
  if (store.requests.size === 0) {
    root.appendChild(el("p", { class: "empty" }, "No requests yet."));
    return;
  }
  const ids = [...store.requests.keys()].sort();
  for (const id of ids) {
    root.appendChild(requestCard(store.requests.get(id)!, store, onSelect));
  }
}

function requestCard(view: RequestView, store: ConsoleStore,
                     onSelect: (id: string) => void): HTMLElement {
  const card = el("div", { class: "card" });
  const head = el("div", { class: "card-head" });
  head.appendChild(el("span", { class: "req-id" }, view.id));
  const badge = el("span", { class: `state state-${view.state.toLowerCase()}` }, view.state);
  head.appendChild(badge);
  if (view.reason) head.appendChild(el("span", { class: "reason" }, view.reason));
  card.appendChild(head);

  const timeline = el("div", { class: "timeline" });
  for (const step of view.transitions) {
    const t = step.t === null ? "" : ` @ ${step.t.toFixed(2)}s`;
    timeline.appendChild(el("span", { class: "step" }, `${step.state}${t}`));
  }
  card.appendChild(timeline);

  const rows = store.series.get(view.id) ?? [];
  if (rows.length > 0) {
    card.appendChild(metricsPanel(rows));
  }
  const foot = el("div", { class: "card-foot" });
  foot.appendChild(el("span", {}, `${view.batches} measurement batches`));
  if (view.recordId) {
    const link = el("a", { href: "#", class: "rec-link" }, `record ${view.recordId}`);
    link.addEventListener("click", (ev) => { ev.preventDefault(); onSelect(view.id); });
    foot.appendChild(link);
  }
  card.appendChild(foot);
  return card;
}

// -- metric sparklines ----------------------------------------------------------

function sparkline(values: (number | null)[], width = 180, height = 36): SVGElement {
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  svg.setAttribute("class", "spark");
  const finite = values.filter((v): v is number => v !== null && Number.isFinite(v));
  if (finite.length === 0) return svg;
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  const span = hi - lo || 1;
  const points = values
    .map((v, i) => {
      if (v === null || !Number.isFinite(v)) return null;
      const x = (i / Math.max(values.length - 1, 1)) * (width - 4) + 2;
      const y = height - 4 - ((v - lo) / span) * (height - 8);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .filter((p): p is string => p !== null);
  const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
  line.setAttribute("points", points.join(" "));
  line.setAttribute("fill", "none");
  line.setAttribute("stroke", "currentColor");
  line.setAttribute("stroke-width", "1.5");
  svg.appendChild(line);
  return svg;
}

function metricsPanel(rows: SeriesRow[]): HTMLElement {
  const panel = el("div", { class: "metrics" });
  const last = rows[rows.length - 1];
  const specs: [string, (r: SeriesRow) => number | null][] = [
    ["CAR", (r) => r.car],
    ["V_eff", (r) => r.v_eff],
    ["fidelity", (r) => r.fidelity],
  ];
  for (const [label, pick] of specs) {
    const cell = el("div", { class: "metric" });
    cell.appendChild(el("div", { class: "metric-label" },
                        `${label} ${fmt(pick(last))}`));
    cell.appendChild(sparkline(rows.map(pick)));
    panel.appendChild(cell);
  }
  return panel;
}

// -- topology -------------------------------------------------------------------

export function renderTopology(root: HTMLElement, doc: TopologyDoc): void {
  root.replaceChildren();
  root.appendChild(el("div", { class: "topo-version" }, `topology v${doc.version}`));

  const sites = [...new Set(doc.nodes.map((n) => n.site))].sort();
  const positions = new Map<string, { x: number; y: number }>();
  const colWidth = 170;
  const rowHeight = 56;
  let maxRows = 1;
  sites.forEach((site, col) => {
    const members = doc.nodes.filter((n) => n.site === site);
    maxRows = Math.max(maxRows, members.length);
    members.forEach((node, row) => {
      positions.set(node.id, { x: col * colWidth + 90, y: row * rowHeight + 56 });
    });
  });

  const width = sites.length * colWidth + 20;
  const height = maxRows * rowHeight + 80;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "topo");

  sites.forEach((site, col) => {
    const label = document.createElementNS("http://www.w3.org/2000/svg", "text");
    label.setAttribute("x", String(col * colWidth + 90));
    label.setAttribute("y", "20");
    label.setAttribute("class", "site-label");
    label.textContent = site;
    svg.appendChild(label);
  });

  for (const link of doc.links) {
    const a = positions.get(link.a.node);
    const b = positions.get(link.b.node);
    if (!a || !b) continue;
    const line = document.createElementNS("http://www.w3.org/2000/svg", "line");
    line.setAttribute("x1", String(a.x));
    line.setAttribute("y1", String(a.y));
    line.setAttribute("x2", String(b.x));
    line.setAttribute("y2", String(b.y));
    const used = link.occupied.length;
    line.setAttribute("class", used > 0 ? "link busy" : "link");
    svg.appendChild(line);
    const label = document.createElementNS("http://www.w3.org/2000/svg", "text");
    label.setAttribute("x", String((a.x + b.x) / 2));
    label.setAttribute("y", String((a.y + b.y) / 2 - 4));
    label.setAttribute("class", "link-label");
    label.textContent = `${used}/${link.total_wavelengths * link.bands.length}`;
    svg.appendChild(label);
  }

  for (const node of doc.nodes) {
    const pos = positions.get(node.id)!;
    const dot = document.createElementNS("http://www.w3.org/2000/svg", "circle");
    dot.setAttribute("cx", String(pos.x));
    dot.setAttribute("cy", String(pos.y));
    dot.setAttribute("r", "9");
    dot.setAttribute("fill", KIND_COLORS[node.kind] ?? "#999");
    const title = document.createElementNS("http://www.w3.org/2000/svg", "title");
    title.textContent = `${node.id} (${node.kind})`;
    dot.appendChild(title);
    svg.appendChild(dot);
    const label = document.createElementNS("http://www.w3.org/2000/svg", "text");
    label.setAttribute("x", String(pos.x));
    label.setAttribute("y", String(pos.y + 22));
    label.setAttribute("class", "node-label");
    label.textContent = node.id;
    svg.appendChild(label);
  }
  root.appendChild(svg);
}

// -- measurement browser -----------------------------------------------------------

export function renderMeasurements(root: HTMLElement, record: MeasurementRecord): void {
  root.replaceChildren();
  root.appendChild(el("h3", {}, `Measurements for ${record.request_id}`));
  const summary = Object.entries(record.summary ?? {})
    .map(([k, v]) => `${k}: ${typeof v === "number" ? fmt(v) : v}`)
    .join("  ·  ");
  root.appendChild(el("p", { class: "summary" }, summary));
  if (record.measurements.length === 0) {
    root.appendChild(el("p", { class: "empty" }, "No measurement rows."));
    return;
  }
  const columns = Object.keys(record.measurements[0]);
  const table = el("table");
  const head = el("tr");
  for (const c of columns) head.appendChild(el("th", {}, c));
  table.appendChild(head);
  for (const row of record.measurements.slice(0, 200)) {
    const tr = el("tr");
    for (const c of columns) {
      const v = row[c];
      tr.appendChild(el("td", {}, typeof v === "number" ? fmt(v) : String(v ?? "–")));
    }
    table.appendChild(tr);
  }
  root.appendChild(table);
}

// -- audit ----------------------------------------------------------------------

export function renderAudit(root: HTMLElement, rows: AuditRow[]): void {
  root.replaceChildren();
  const table = el("table");
  const head = el("tr");
  for (const c of ["time", "subject", "action", "target", "outcome"]) {
    head.appendChild(el("th", {}, c));
  }
  table.appendChild(head);
  for (const row of rows) {
    const tr = el("tr");
    tr.appendChild(el("td", {}, new Date(row.time * 1000).toISOString()));
    tr.appendChild(el("td", {}, row.subject));
    tr.appendChild(el("td", {}, row.action));
    tr.appendChild(el("td", {}, row.target));
    tr.appendChild(el("td", {}, row.outcome));
    table.appendChild(tr);
  }
  root.appendChild(table);
}

export function setStale(indicator: HTMLElement, stale: boolean): void {
  indicator.textContent = stale ? "stream stale — reconnecting" : "live";
  indicator.className = stale ? "stale" : "live";
}
