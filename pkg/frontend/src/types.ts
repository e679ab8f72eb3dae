// Wire types of the /v1 API. The console renders exactly what the server
// sends; lifecycle states are never invented client-side.

export type RequestState =
  | "Submitted"
  | "Analyzing"
  | "PathsEstablished"
  | "Verifying"
  | "Calibrating"
  | "Ready"
  | "Distributing"
  | "Recalibrating"
  | "Completed"
  | "Failed";

export const LIFECYCLE_STATES: readonly RequestState[] = [
  "Submitted", "Analyzing", "PathsEstablished", "Verifying", "Calibrating",
  "Ready", "Distributing", "Recalibrating", "Completed", "Failed",
];

export interface SessionInfo {
  subject: string;
  scopes: string[];
}

export interface TopologyNode {
  id: string;
  kind: "QNode" | "EPS" | "BSMNode" | "OpticalSwitch";
  site: string;
  insertion_loss_db: number;
}

export interface TopologyLink {
  id: string;
  a: { node: string; port: string };
  b: { node: string; port: string };
  length_km: number;
  total_wavelengths: number;
  bands: string[];
  occupied: string[];
}

export interface TopologyDoc {
  version: number;
  nodes: TopologyNode[];
  links: TopologyLink[];
}

export interface TransitionEntry {
  t: number | null;
  state: RequestState;
  reason?: string;
}

export interface RequestDoc {
  id: string;
  user: string;
  qnode_a: string;
  qnode_b: string;
  qubit_type: string;
  rate: number;
  duration: number;
  via_bsm: boolean;
  state: RequestState;
  failure_reason: string;
  transitions: TransitionEntry[];
  batches: number;
  record_id: string | null;
  data_loss: boolean;
}

export interface MeasurementRecord {
  request_id: string;
  state: string;
  measurements: Record<string, number | string | null>[];
  trace: { t: number; kind: string; sender: string; topic: string }[];
  summary: Record<string, number>;
}

export interface AuditRow {
  seq: number;
  time: number;
  subject: string;
  action: string;
  target: string;
  outcome: string;
}

// Server-sent events carry their global sequence both as the SSE id and in
// the body; the cursor protocol resumes strictly after a seq.
export interface ApiEvent {
  seq: number;
  request_id: string;
  type: "transition" | "measurement" | "stored";
  t?: number | null;
  state?: RequestState;
  reason?: string;
  record_id?: string | null;
  sender?: string;
  count?: number;
  accumulated?: number;
  car?: number | null;
  v_eff?: number | null;
  fidelity?: number | null;
}

export interface SubmitBody {
  qnode_a: string;
  qnode_b: string;
  qubit_type: string;
  rate: number;
  duration: number;
  via_bsm?: boolean;
  idempotency_key?: string;
}
