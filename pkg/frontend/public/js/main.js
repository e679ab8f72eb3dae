// Console wiring: token form, event stream -> store -> views, submit form
// with an idempotency key so rapid double-clicks cannot double-submit.
import { ApiClient, ApiError } from "./api.js";
import { validateRequirements } from "./form.js";
import { EventStream } from "./sse.js";
import { ConsoleStore } from "./store.js";
import { renderAudit, renderBoard, renderMeasurements, renderTopology, setStale } from "./views.js";
function byId(id) {
    const node = document.getElementById(id);
    if (node === null)
        throw new Error(`missing #${id}`);
    return node;
}
const store = new ConsoleStore();
let client = null;
let stream = null;
let idempotencyKey = crypto.randomUUID();
let topologyStale = false;
function renderAll() {
    if (client === null)
        return;
    renderBoard(byId("board"), store, showMeasurements);
}
async function refreshTopology() {
    if (client === null || topologyStale)
        return;
    topologyStale = true;
    try {
        renderTopology(byId("topology"), await client.topology());
    }
    finally {
        topologyStale = false;
    }
}
async function showMeasurements(requestId) {
    if (client === null)
        return;
    try {
        renderMeasurements(byId("measurements"), await client.measurements(requestId));
    }
    catch (err) {
        byId("measurements").textContent =
            err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    }
}
async function connect() {
    const base = (byId("server").value || window.location.origin)
        .replace(/\/$/, "");
    const token = byId("token").value.trim();
    const status = byId("auth-status");
    client = new ApiClient(base, token);
    try {
        const session = await client.auth();
        status.textContent = `signed in as ${session.subject} [${session.scopes.join(", ")}]`;
    }
    catch (err) {
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
            if (event.type === "transition")
                void refreshTopology();
        },
        onStale: (stale) => setStale(byId("stream-state"), stale),
    });
    void stream.run();
}
async function fillQnodeChoices() {
    if (client === null)
        return;
    const topo = await client.topology();
    const qnodes = topo.nodes.filter((n) => n.kind === "QNode").map((n) => n.id).sort();
    for (const id of ["qnode-a", "qnode-b"]) {
        const select = byId(id);
        select.replaceChildren();
        for (const q of qnodes) {
            const opt = document.createElement("option");
            opt.value = q;
            opt.textContent = q;
            select.appendChild(opt);
        }
    }
    byId("qnode-b").selectedIndex = qnodes.length > 1 ? 1 : 0;
}
async function loadAudit() {
    if (client === null)
        return;
    try {
        renderAudit(byId("audit"), await client.audit());
    }
    catch {
        byId("audit").textContent = "audit view needs the admin scope";
    }
}
async function submit() {
    if (client === null)
        return;
    const errBox = byId("submit-error");
    errBox.textContent = "";
    const rate = Number(byId("rate").value);
    const duration = Number(byId("duration").value);
    const problem = validateRequirements(rate, duration);
    if (problem !== null) {
        errBox.textContent = problem; // inline error; no call leaves the browser
        return;
    }
    try {
        await client.submit({
            qnode_a: byId("qnode-a").value,
            qnode_b: byId("qnode-b").value,
            qubit_type: byId("qubit-type").value,
            rate,
            duration,
            via_bsm: byId("via-bsm").checked,
            idempotency_key: idempotencyKey,
        });
        idempotencyKey = crypto.randomUUID(); // next distinct submission
    }
    catch (err) {
        errBox.textContent = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    }
}
byId("connect").addEventListener("click", () => void connect());
byId("submit").addEventListener("click", () => void submit());
byId("audit-refresh").addEventListener("click", () => void loadAudit());
