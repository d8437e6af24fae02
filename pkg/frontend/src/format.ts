/**
 * Display formatting.
 *
 * Every rendered number passes through one of these functions with a
 * service response field as input, so "what the screen shows" and "what
 * the session export contains" are computed identically.
 */

/** A1c values as served (already rounded to one decimal). */
export function fmtA1c(value: number): string {
  return value.toFixed(1);
}

/** Signed A1c delta, e.g. "-0.4" / "+1.2" / "0.0". */
export function fmtDelta(value: number): string {
  const rounded = Math.round(value * 10) / 10;
  if (Object.is(rounded, 0) || Object.is(rounded, -0)) return '0.0';
  return `${rounded > 0 ? '+' : ''}${rounded.toFixed(1)}`;
}

/** Class probabilities with three decimals. */
export function fmtProbability(value: number): string {
  return value.toFixed(3);
}

/** Attention weights with four decimals. */
export function fmtWeight(value: number): string {
  return value.toFixed(4);
}

/** Medication sets as a stable comma-joined list; empty set is explicit. */
export function fmtMedications(meds: string[]): string {
  return meds.length ? [...meds].sort().join(', ') : '(no medication)';
}

/** Goal bin b covers A1c [4.0 + b/10, 4.0 + (b+1)/10). */
export function fmtGoalBin(bin: number): string {
  const lo = 4.0 + bin / 10;
  return `${lo.toFixed(1)}–${(lo + 0.1).toFixed(1)}`;
}

/** Prompt range as sent to the service. */
export function fmtRange(lo: number, hi: number): string {
  return `${lo.toFixed(1)}–${hi.toFixed(1)}`;
}
