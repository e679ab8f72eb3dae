// Client-side form checks: catch impossible requirements before any request
// leaves the browser. Server-side validation remains authoritative; its
// errors are surfaced verbatim.

export function validateRequirements(rate: number, duration: number): string | null {
  if (!Number.isFinite(rate) || rate <= 0) return "rate must be > 0";
  if (!Number.isFinite(duration) || duration <= 0) return "duration must be > 0";
  return null;
}
