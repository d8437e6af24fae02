/**
 * Typed REST client for the cdtlab service.
 *
 * All reads validate against the zod contracts in types.ts.  Recommend
 * requests are serialized per client: a newer submission aborts the one
 * still in flight, so the panel never renders a stale what-if on top of
 * a fresh one.
 */
import {
  ErrorDetailSchema,
  Health,
  HealthSchema,
  ModelInfo,
  ModelInfoSchema,
  PatientDetail,
  PatientDetailSchema,
  PatientPage,
  PatientPageSchema,
  RecommendRequest,
  RecommendResponse,
  RecommendResponseSchema,
  ServiceError,
} from './types';

/** Service URL: build-time default, overridable at runtime. */
export function defaultBaseUrl(): string {
  const env = (import.meta as { env?: Record<string, string> }).env;
  return env?.VITE_CDTLAB_URL ?? 'http://localhost:8000';
}

async function readDetail(resp: Response): Promise<string> {
  try {
    const parsed = ErrorDetailSchema.parse(await resp.json());
    return typeof parsed.detail === 'string'
      ? parsed.detail
      : JSON.stringify(parsed.detail);
  } catch {
    return resp.statusText || `status ${resp.status}`;
  }
}

export class ApiClient {
  private inflightRecommend: AbortController | null = null;

  constructor(
    public baseUrl: string = defaultBaseUrl(),
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async getJson(path: string): Promise<unknown> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!resp.ok) {
      throw new ServiceError(resp.status, await readDetail(resp));
    }
    return resp.json();
  }

  async health(): Promise<Health> {
    return HealthSchema.parse(await this.getJson('/v1/health'));
  }

  async modelInfo(): Promise<ModelInfo> {
    return ModelInfoSchema.parse(await this.getJson('/v1/model'));
  }

  async patients(page = 0, pageSize = 50): Promise<PatientPage> {
    return PatientPageSchema.parse(
      await this.getJson(`/v1/patients?page=${page}&page_size=${pageSize}`),
    );
  }

  async patient(id: string): Promise<PatientDetail> {
    return PatientDetailSchema.parse(
      await this.getJson(`/v1/patients/${encodeURIComponent(id)}`),
    );
  }

  /**
   * POST /v1/recommend.  At most one request is in flight; issuing a new
   * one aborts the previous, whose promise then rejects with AbortError.
   */
  async recommend(body: RecommendRequest): Promise<RecommendResponse> {
    this.inflightRecommend?.abort();
    const controller = new AbortController();
    this.inflightRecommend = controller;
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/v1/recommend`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(body),
        signal: controller.signal,
      });
      if (!resp.ok) {
        throw new ServiceError(resp.status, await readDetail(resp));
      }
      return RecommendResponseSchema.parse(await resp.json());
    } finally {
      if (this.inflightRecommend === controller) {
        this.inflightRecommend = null;
      }
    }
  }
}
