// Wire types of the /v1 API. The console renders exactly what the server
// sends; lifecycle states are never invented client-side.
export const LIFECYCLE_STATES = [
    "Submitted", "Analyzing", "PathsEstablished", "Verifying", "Calibrating",
    "Ready", "Distributing", "Recalibrating", "Completed", "Failed",
];
