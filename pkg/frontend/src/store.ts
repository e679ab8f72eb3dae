// Single UI store: a pure fold of server events.  The request board and the
// metric series come entirely from the event stream; nothing is decided
// client-side, so two consumers that saw the same sequence render the same
// board regardless of reconnects.

import { LIFECYCLE_STATES, type ApiEvent, type RequestState, type TransitionEntry } from "./types.js";

export interface SeriesRow {
  t: number | null;
  sender: string;
  count: number;
  accumulated: number;
  car: number | null;
  v_eff: number | null;
  fidelity: number | null;
}

export interface RequestView {
  id: string;
  state: RequestState;
  reason: string;
  transitions: TransitionEntry[];
  batches: number;
  recordId: string | null;
}

export class ConsoleStore {
  requests = new Map<string, RequestView>();
  series = new Map<string, SeriesRow[]>();
  cursor = 0;
  stale = false;

  /** Apply one event; returns false for duplicates/out-of-order replays. */
  apply(event: ApiEvent): boolean {
    if (event.seq <= this.cursor) return false;
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

  private view(requestId: string): RequestView {
    let view = this.requests.get(requestId);
    if (view === undefined) {
      view = { id: requestId, state: "Submitted", reason: "", transitions: [],
               batches: 0, recordId: null };
      this.requests.set(requestId, view);
    }
    return view;
  }

  private applyTransition(event: ApiEvent): boolean {
    const state = event.state;
    if (state === undefined || !LIFECYCLE_STATES.includes(state)) return false;
    const view = this.view(event.request_id);
    view.state = state;
    if (event.reason) view.reason = event.reason;
    view.transitions.push({ t: event.t ?? null, state, reason: event.reason ?? "" });
    return true;
  }

  private applyMeasurement(event: ApiEvent): boolean {
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
  fingerprint(): string {
    const ids = [...this.requests.keys()].sort();
    return JSON.stringify(ids.map((id) => {
      const v = this.requests.get(id)!;
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
