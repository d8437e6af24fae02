/**
 * Session state for the what-if loop.
 *
 * The session records every prompt the user fired and the full service
 * response it produced.  History is append-only: adjusting the goal range
 * adds a comparison row rather than replacing one, so successive what-ifs
 * sit side by side.  The JSON export carries both the raw responses and
 * the rendered strings, and the rendered strings are recomputed from the
 * raw fields at export time — the export can never disagree with the
 * screen.
 */
import {
  fmtA1c,
  fmtDelta,
  fmtGoalBin,
  fmtMedications,
  fmtProbability,
  fmtRange,
} from './format';
import {
  GOAL_MIN,
  RANGE_WIDGET_MAX,
  RecommendRequest,
  RecommendResponse,
} from './types';

export type PresetName = 'Normal' | 'Lower' | 'Higher';

/** The normal-A1c preset's literal range. */
export const NORMAL_RANGE: [number, number] = [4.0, 5.6];

export interface PromptSpec {
  label: string;
  /** Body fragment merged into the recommend request. */
  goal: Pick<RecommendRequest, 'regime' | 'range'>;
}

/**
 * Preset regimes.  "Normal" issues its range explicitly; "Lower" and
 * "Higher" are relative to the patient's own latest A1c and so use the
 * service's named regimes.
 */
export function presetPrompt(name: PresetName): PromptSpec {
  switch (name) {
    case 'Normal':
      return { label: 'Normal', goal: { range: NORMAL_RANGE } };
    case 'Lower':
      return { label: 'Lower', goal: { regime: 'lower' } };
    case 'Higher':
      return { label: 'Higher', goal: { regime: 'higher' } };
  }
}

/** Clamp one slider endpoint to the widget's [4.0, 17.9] span. */
export function clampGoal(value: number): number {
  if (Number.isNaN(value)) return GOAL_MIN;
  const clamped = Math.min(Math.max(value, GOAL_MIN), RANGE_WIDGET_MAX);
  return Math.round(clamped * 10) / 10;
}

/** Clamp and order a free-range prompt. */
export function freeRangePrompt(lo: number, hi: number): PromptSpec {
  const a = clampGoal(lo);
  const b = clampGoal(hi);
  const range: [number, number] = a <= b ? [a, b] : [b, a];
  return { label: `Range ${fmtRange(range[0], range[1])}`, goal: { range } };
}

/** One explored regime, shaped for display. */
export interface ComparisonRow {
  label: string;
  medications: string;
  probability: string;
  goalBin: string;
  estimatedFactualA1c: string;
  estimatedRecommendedA1c: string;
  deltaA1c: string;
}

export interface WhatIfEntry {
  index: number;
  label: string;
  request: RecommendRequest;
  response: RecommendResponse;
}

export interface DisplayPreferences {
  showAttention: boolean;
  topN: number;
}

export interface SessionState {
  selectedPatientId: string | null;
  currentRange: [number, number];
  history: WhatIfEntry[];
  preferences: DisplayPreferences;
}

export function newSession(): SessionState {
  return {
    selectedPatientId: null,
    currentRange: [...NORMAL_RANGE],
    history: [],
    preferences: { showAttention: false, topN: 5 },
  };
}

/** Display shape of one history entry, computed only from its response. */
export function comparisonRow(entry: WhatIfEntry): ComparisonRow {
  const r = entry.response;
  return {
    label: entry.label,
    medications: fmtMedications(r.recommended.medications),
    probability: fmtProbability(r.recommended.probability),
    goalBin: fmtGoalBin(r.recommended.goal_bin),
    estimatedFactualA1c: fmtA1c(r.estimated_factual_a1c),
    estimatedRecommendedA1c: fmtA1c(r.estimated_recommended_a1c),
    deltaA1c: fmtDelta(r.difference),
  };
}

/**
 * Append one what-if to the session.  Returns a new state; the existing
 * history array is never mutated or truncated.
 */
export function appendWhatIf(
  state: SessionState,
  label: string,
  request: RecommendRequest,
  response: RecommendResponse,
): SessionState {
  return {
    ...state,
    history: [
      ...state.history,
      { index: state.history.length, label, request, response },
    ],
  };
}

export interface SessionExport {
  exported_at: string;
  service_model: RecommendResponse['model'] | null;
  selected_patient_id: string | null;
  what_ifs: Array<{
    index: number;
    label: string;
    request: RecommendRequest;
    response: RecommendResponse;
    rendered: ComparisonRow;
  }>;
}

/** JSON download payload: raw responses plus the rendered values. */
export function exportSession(
  state: SessionState,
  now: () => Date = () => new Date(),
): SessionExport {
  const last = state.history[state.history.length - 1];
  return {
    exported_at: now().toISOString(),
    service_model: last ? last.response.model : null,
    selected_patient_id: state.selectedPatientId,
    what_ifs: state.history.map((entry) => ({
      index: entry.index,
      label: entry.label,
      request: entry.request,
      response: entry.response,
      rendered: comparisonRow(entry),
    })),
  };
}
