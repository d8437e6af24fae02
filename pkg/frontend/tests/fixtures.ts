/** Shared response fixtures matching the service contract. */
import { PatientDetail, RecommendResponse } from '../src/types';

export const MODEL_HASHES = {
  cdt_checkpoint: 'a'.repeat(64),
  evaluator_checkpoint: 'b'.repeat(64),
  schema: 'c'.repeat(64),
};

export function recommendResponse(
  overrides: Partial<RecommendResponse> = {},
): RecommendResponse {
  return {
    patient_id: 'p00001',
    goal_bins_evaluated: [0, 1, 2],
    recommended: {
      goal_bin: 12,
      class: 7,
      probability: 0.4215,
      medications: ['metformin', 'insulin'],
      fallback_mass: 0.001,
    },
    ranked_sets: [
      {
        goal_bin: 12,
        class: 7,
        probability: 0.4215,
        medications: ['metformin', 'insulin'],
        fallback_mass: 0.001,
      },
      {
        goal_bin: 3,
        class: 2,
        probability: 0.31,
        medications: ['metformin'],
        fallback_mass: 0.002,
      },
    ],
    factual_medications: ['insulin'],
    estimated_factual_a1c: 7.8,
    estimated_recommended_a1c: 7.2,
    difference: -0.6,
    model: MODEL_HASHES,
    ...overrides,
  };
}

export function patientDetail(
  overrides: Partial<PatientDetail> = {},
): PatientDetail {
  return {
    id: 'p00001',
    baseline: { sex: 1, age: 3 },
    admissions: [
      {
        labs: { hemoglobin_a1c: 8.1, glucose_serum: 9.2 },
        meds: ['metformin'],
        a1c_next: 7.9,
      },
      {
        labs: { hemoglobin_a1c: null, glucose_serum: 8.4 },
        meds: ['metformin', 'insulin'],
        a1c_next: null,
      },
      {
        labs: { hemoglobin_a1c: 7.5, glucose_serum: null },
        meds: [],
        a1c_next: 7.1,
      },
    ],
    ...overrides,
  };
}
