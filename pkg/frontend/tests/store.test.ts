import { describe, expect, it } from "vitest";

import { validateRequirements } from "../src/form.js";
import { ConsoleStore } from "../src/store.js";
import type { ApiEvent } from "../src/types.js";

function transition(seq: number, rid: string, state: string, t = seq): ApiEvent {
  return { seq, request_id: rid, type: "transition", state: state as ApiEvent["state"], t };
}

function measurement(seq: number, rid: string, veff: number): ApiEvent {
  return { seq, request_id: rid, type: "measurement", t: seq, sender: "q1",
           count: 10, accumulated: 10, car: 100, v_eff: veff, fidelity: 0.8 };
}

describe("validateRequirements", () => {
  it("rejects nonpositive or non-numeric fields before any call is made", () => {
    expect(validateRequirements(0, 5)).toContain("rate");
    expect(validateRequirements(-3, 5)).toContain("rate");
    expect(validateRequirements(NaN, 5)).toContain("rate");
    expect(validateRequirements(10, 0)).toContain("duration");
    expect(validateRequirements(10, Infinity)).toContain("duration");
    expect(validateRequirements(10, 5)).toBeNull();
  });
});

describe("ConsoleStore", () => {
  it("folds transitions into a request view", () => {
    const store = new ConsoleStore();
    store.apply(transition(1, "r1", "Submitted"));
    store.apply(transition(2, "r1", "Analyzing"));
    store.apply(transition(3, "r1", "Failed"));
    const view = store.requests.get("r1")!;
    expect(view.state).toBe("Failed");
    expect(view.transitions.map((t) => t.state)).toEqual(
      ["Submitted", "Analyzing", "Failed"]);
  });

  it("ignores duplicate and stale sequence numbers", () => {
    const store = new ConsoleStore();
    expect(store.apply(transition(5, "r1", "Submitted"))).toBe(true);
    expect(store.apply(transition(5, "r1", "Analyzing"))).toBe(false);
    expect(store.apply(transition(3, "r1", "Analyzing"))).toBe(false);
    expect(store.requests.get("r1")!.state).toBe("Submitted");
    expect(store.cursor).toBe(5);
  });

  it("never invents lifecycle states", () => {
    const store = new ConsoleStore();
    expect(store.apply(transition(1, "r1", "Transmogrified"))).toBe(false);
    expect(store.requests.has("r1")).toBe(false);
  });

  it("accumulates measurement batches into the series", () => {
    const store = new ConsoleStore();
    store.apply(transition(1, "r1", "Distributing"));
    store.apply(measurement(2, "r1", 0.77));
    store.apply(measurement(3, "r1", 0.76));
    expect(store.requests.get("r1")!.batches).toBe(2);
    expect(store.series.get("r1")!.map((r) => r.v_eff)).toEqual([0.77, 0.76]);
  });

  it("records the stored record id", () => {
    const store = new ConsoleStore();
    store.apply(transition(1, "r1", "Completed"));
    store.apply({ seq: 2, request_id: "r1", type: "stored", record_id: "rec-0001" });
    expect(store.requests.get("r1")!.recordId).toBe("rec-0001");
  });

  it("fingerprint is insensitive to request arrival order", () => {
    const a = new ConsoleStore();
    const b = new ConsoleStore();
    const events = [
      transition(1, "r1", "Submitted"),
      transition(2, "r2", "Submitted"),
      transition(3, "r1", "Analyzing"),
      transition(4, "r2", "Failed"),
    ];
    for (const e of events) a.apply(e);
    for (const e of events) b.apply(e);
    expect(a.fingerprint()).toBe(b.fingerprint());
  });

  it("two consumers of the same sequence converge regardless of split point", () => {
    const full = new ConsoleStore();
    const resumed = new ConsoleStore();
    const events: ApiEvent[] = [];
    let seq = 0;
    for (const state of ["Submitted", "Analyzing", "PathsEstablished", "Verifying",
                         "Calibrating", "Ready", "Distributing"]) {
      events.push(transition(++seq, "r1", state));
    }
    events.push(measurement(++seq, "r1", 0.77));
    events.push(transition(++seq, "r1", "Completed"));
    events.push({ seq: ++seq, request_id: "r1", type: "stored", record_id: "rec-0001" });

    for (const e of events) full.apply(e);
    // The resumed consumer drops, replays with overlap, and continues.
    for (const e of events.slice(0, 4)) resumed.apply(e);
    for (const e of events.slice(2)) resumed.apply(e); // overlap is deduped
    expect(resumed.fingerprint()).toBe(full.fingerprint());
  });
});
