/**
 * Typed contracts for the cdtlab service `/v1/*` JSON payloads.
 *
 * Every number rendered by the explorer is traceable to one of these
 * fields; the zod schemas reject payloads that drift from the service
 * contract instead of silently rendering garbage.
 */
import { z } from 'zod';

/** A1c goal bounds shared with the service: bins cover [4.0, 18.0). */
export const GOAL_MIN = 4.0;
export const GOAL_MAX = 18.0;
/** The range widget clamps to this closed interval. */
export const RANGE_WIDGET_MAX = 17.9;

export const HealthSchema = z.object({
  status: z.enum(['ok', 'degraded']),
});
export type Health = z.infer<typeof HealthSchema>;

export const ModelInfoSchema = z.discriminatedUnion('loaded', [
  z.object({ loaded: z.literal(false) }),
  z.object({
    loaded: z.literal(true),
    hashes: z.object({
      cdt_checkpoint: z.string(),
      evaluator_checkpoint: z.string(),
      schema: z.string(),
    }),
    evaluator: z.string(),
    cdt_config: z.record(z.unknown()),
    evaluator_config: z.record(z.unknown()),
    n_patients: z.number().int(),
  }),
]);
export type ModelInfo = z.infer<typeof ModelInfoSchema>;

export const PatientSummarySchema = z.object({
  id: z.string(),
  n_admissions: z.number().int().positive(),
});
export type PatientSummary = z.infer<typeof PatientSummarySchema>;

export const PatientPageSchema = z.object({
  total: z.number().int().nonnegative(),
  page: z.number().int().nonnegative(),
  page_size: z.number().int().positive(),
  patients: z.array(PatientSummarySchema),
});
export type PatientPage = z.infer<typeof PatientPageSchema>;

export const AdmissionSchema = z.object({
  labs: z.record(z.number().nullable()),
  meds: z.array(z.string()),
  a1c_next: z.number().nullable(),
});
export type Admission = z.infer<typeof AdmissionSchema>;

export const PatientDetailSchema = z.object({
  id: z.string(),
  baseline: z.record(z.number()),
  admissions: z.array(AdmissionSchema),
});
export type PatientDetail = z.infer<typeof PatientDetailSchema>;

/** One (goal bin, medication set) candidate as ranked by the service. */
export const RankedSetSchema = z.object({
  goal_bin: z.number().int(),
  class: z.number().int(),
  probability: z.number(),
  medications: z.array(z.string()),
  fallback_mass: z.number(),
});
export type RankedSet = z.infer<typeof RankedSetSchema>;

export const AttentionPayloadSchema = z.object({
  token_labels: z.array(z.string()),
  /** layers[l][h] is an n_tokens x n_tokens weight matrix. */
  layers: z.array(z.array(z.array(z.array(z.number())))),
});
export type AttentionPayload = z.infer<typeof AttentionPayloadSchema>;

export const RecommendResponseSchema = z.object({
  patient_id: z.string().nullable(),
  goal_bins_evaluated: z.array(z.number().int()),
  recommended: RankedSetSchema,
  ranked_sets: z.array(RankedSetSchema),
  factual_medications: z.array(z.string()),
  estimated_factual_a1c: z.number(),
  estimated_recommended_a1c: z.number(),
  difference: z.number(),
  model: z.object({
    cdt_checkpoint: z.string(),
    evaluator_checkpoint: z.string(),
    schema: z.string(),
  }),
  attention: AttentionPayloadSchema.optional(),
});
export type RecommendResponse = z.infer<typeof RecommendResponseSchema>;

/** Request body for POST /v1/recommend. */
export interface RecommendRequest {
  patient_id?: string;
  history?: { baseline: Record<string, number>; admissions: Admission[] };
  regime?: 'normal' | 'lower' | 'higher';
  range?: [number, number];
  options?: {
    top_n?: number;
    include_attention?: boolean;
    all_layers?: boolean;
  };
}

export const ErrorDetailSchema = z.object({ detail: z.unknown() });

/** Service-side rejection surfaced inline in the prompt panel. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ServiceError';
  }
}
