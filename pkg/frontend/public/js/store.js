// Single UI store: a pure fold of server events.  The request board and the
// metric series come entirely from the event stream; nothing is decided
// client-side, so two consumers that saw the same sequence render the same
// board regardless of reconnects.
import { LIFECYCLE_STATES } from "./types.js";
export class ConsoleStore {
    constructor() {
        this.requests = new Map();
        this.series = new Map();
        this.cursor = 0;
        this.stale = false;
    }
    /** Apply one event; returns false for duplicates/out-of-order replays. */
    apply(event) {
        if (event.seq <= this.cursor)
            return false;
        this.cursor = event.seq;
        switch (event.type) {
            case "transition":
                return this.applyTransition(event);
            case "measurement":
                return this.applyMeasurement(event);
            case "stored": {
                const view = this.view(event.request_id);
                view.recordId = event.record_id ?? null;
                return true;
            }
            default:
                return false; // unknown event types are ignored, never invented
        }
    }
    view(requestId) {
        let view = this.requests.get(requestId);
        if (view === undefined) {
            view = { id: requestId, state: "Submitted", reason: "", transitions: [],
                batches: 0, recordId: null };
            this.requests.set(requestId, view);
        }
        return view;
    }
    applyTransition(event) {
        const state = event.state;
        if (state === undefined || !LIFECYCLE_STATES.includes(state))
            return false;
        const view = this.view(event.request_id);
        view.state = state;
        if (event.reason)
            view.reason = event.reason;
        view.transitions.push({ t: event.t ?? null, state, reason: event.reason ?? "" });
        return true;
    }
    applyMeasurement(event) {
        const view = this.view(event.request_id);
        view.batches += 1;
        let rows = this.series.get(event.request_id);
        if (rows === undefined) {
            rows = [];
            this.series.set(event.request_id, rows);
        }
        rows.push({
            t: event.t ?? null,
            sender: event.sender ?? "",
            count: event.count ?? 0,
            accumulated: event.accumulated ?? 0,
            car: event.car ?? null,
            v_eff: event.v_eff ?? null,
            fidelity: event.fidelity ?? null,
        });
        return true;
    }
    /** Canonical rendering of the board, for convergence comparisons. */
    fingerprint() {
        const ids = [...this.requests.keys()].sort();
        return JSON.stringify(ids.map((id) => {
            const v = this.requests.get(id);
            return {
                id: v.id,
                state: v.state,
                reason: v.reason,
                batches: v.batches,
                recordId: v.recordId,
                transitions: v.transitions.map((t) => [t.t, t.state, t.reason ?? ""]),
            };
        }));
    }
}
