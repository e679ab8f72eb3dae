// Console wiring: token form, event stream -> store -> views, submit form
// with an idempotency key so rapid double-clicks cannot double-submit.

import { ApiClient, ApiError } from "./api.js";
import { validateRequirements } from "./form.js";
import { EventStream } from "./sse.js";
import { ConsoleStore } from "./store.js";
import { renderAudit, renderBoard, renderMeasurements, renderTopology, setStale } from "./views.js";

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

const store = new ConsoleStore();
let client: ApiClient | null = null;
let stream: EventStream | null = null;
let idempotencyKey = crypto.randomUUID();
let topologyStale = false;

function renderAll(): void {
  if (client === null) return;
  renderBoard(byId("board"), store, showMeasurements);
}

async function refreshTopology(): Promise<void> {
  if (client === null || topologyStale) return;
  topologyStale = true;
  try {
    renderTopology(byId("topology"), await client.topology());
  } finally {
    topologyStale = false;
  }
}

async function showMeasurements(requestId: string): Promise<void> {
  if (client === null) return;
  try {
    renderMeasurements(byId("measurements"), await client.measurements(requestId));
  } catch (err) {
    byId("measurements").textContent =
      err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
  }
}

async function connect(): Promise<void> {
  const base = (byId<HTMLInputElement>("server").value || window.location.origin)
    .replace(/\/$/, "");
  const token = byId<HTMLInputElement>("token").value.trim();
  const status = byId("auth-status");
  client = new ApiClient(base, token);
  try {
    const session = await client.auth();
    status.textContent = `signed in as ${session.subject} [${session.scopes.join(", ")}]`;
  } catch (err) {
    status.textContent = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    client = null;
    return;
  }

  await refreshTopology();
  fillQnodeChoices();
  loadAudit();

  stream?.stop();
  stream = new EventStream({
    baseUrl: base,
    token,
    cursor: 0,
    onEvent: (event) => {
      store.apply(event);
      renderAll();
      if (event.type === "transition") void refreshTopology();
    },
    onStale: (stale) => setStale(byId("stream-state"), stale),
  });
  void stream.run();
}

async function fillQnodeChoices(): Promise<void> {
  if (client === null) return;
  const topo = await client.topology();
  const qnodes = topo.nodes.filter((n) => n.kind === "QNode").map((n) => n.id).sort();
  for (const id of ["qnode-a", "qnode-b"]) {
    const select = byId<HTMLSelectElement>(id);
    select.replaceChildren();
    for (const q of qnodes) {
      const opt = document.createElement("option");
      opt.value = q;
      opt.textContent = q;
      select.appendChild(opt);
    }
  }
  byId<HTMLSelectElement>("qnode-b").selectedIndex = qnodes.length > 1 ? 1 : 0;
}

async function loadAudit(): Promise<void> {
  if (client === null) return;
  try {
    renderAudit(byId("audit"), await client.audit());
  } catch {
    byId("audit").textContent = "audit view needs the admin scope";
  }
}

async function submit(): Promise<void> {
  if (client === null) return;
  const errBox = byId("submit-error");
  errBox.textContent = "";
  const rate = Number(byId<HTMLInputElement>("rate").value);
  const duration = Number(byId<HTMLInputElement>("duration").value);
  const problem = validateRequirements(rate, duration);
  if (problem !== null) {
    errBox.textContent = problem; // inline error; no call leaves the browser
    return;
  }
  try {
    await client.submit({
      qnode_a: byId<HTMLSelectElement>("qnode-a").value,
      qnode_b: byId<HTMLSelectElement>("qnode-b").value,
      qubit_type: byId<HTMLSelectElement>("qubit-type").value,
      rate,
      duration,
      via_bsm: byId<HTMLInputElement>("via-bsm").checked,
      idempotency_key: idempotencyKey,
    });
    idempotencyKey = crypto.randomUUID(); // next distinct submission
  } catch (err) {
    errBox.textContent = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
  }
}

byId("connect").addEventListener("click", () => void connect());
byId("submit").addEventListener("click", () => void submit());
byId("audit-refresh").addEventListener("click", () => void loadAudit());
