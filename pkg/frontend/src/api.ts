/**
 * Typed access to the prediction service.
 *
 * The service owns every number shown in the interface. This module only
 * moves JSON across the wire; it never derives, rounds or recomputes a
 * value. Requests go through an injectable Transport so tests can intercept
 * traffic without a running server.
 */

export interface CovariateDescriptor {
  name: string;
  kind: string;
  transform?: string | null;
  categories?: string[] | null;
  reference_level?: string | null;
  source?: string | null;
}

export interface TreatmentDescriptor {
  name: string;
  reference: boolean;
}

export interface RiskCutoffs {
  low: number;
  high: number;
}

export interface ModelMetadata {
  version: string;
  covariates: CovariateDescriptor[];
  treatments: TreatmentDescriptor[];
  risk_cutoffs: RiskCutoffs;
  stage1_method: string;
  stage1_fingerprint: string;
  n_posterior_draws: number;
}

export interface TreatmentPrediction {
  treatment: string;
  probability: number;
  cr_low: number;
  cr_high: number;
  or_vs_reference: number;
  or_low: number;
  or_high: number;
}

export interface PredictionResponse {
  patient_logit_risk: number;
  patient_risk: number;
  risk_group: string;
  treatments: TreatmentPrediction[];
}

export interface TransportRequest {
  method: string;
  headers?: Record<string, string>;
  body?: string;
  signal?: AbortSignal;
}

export interface TransportResponse {
  status: number;
  text: string;
}

/** One HTTP exchange. Tests substitute a scripted implementation. */
export type Transport = (
  url: string,
  request: TransportRequest,
) => Promise<TransportResponse>;

/** Default transport backed by the browser's fetch. */
export function fetchTransport(): Transport {
  return async (url, request) => {
    const response = await fetch(url, {
      method: request.method,
      headers: request.headers,
      body: request.body,
      signal: request.signal,
    });
    return { status: response.status, text: await response.text() };
  };
}

/** Non-2xx reply from the service, carrying its "detail" message. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`service returned ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

function parseBody(text: string): unknown {
  try {
    return JSON.parse(text);
  } catch {
    return null;
  }
}

function detailOf(parsed: unknown, fallback: string): string {
  if (
    parsed !== null &&
    typeof parsed === "object" &&
    "detail" in parsed &&
    typeof (parsed as { detail: unknown }).detail === "string"
  ) {
    return (parsed as { detail: string }).detail;
  }
  return fallback;
}

export class ApiClient {
  constructor(
    private readonly transport: Transport,
    private readonly base = "",
  ) {}

  async getModel(): Promise<ModelMetadata> {
    const response = await this.transport(this.base + "/model", {
      method: "GET",
    });
    const parsed = parseBody(response.text);
    if (response.status !== 200) {
      throw new ApiError(response.status, detailOf(parsed, response.text));
    }
    return parsed as ModelMetadata;
  }

  /**
   * POST the given body string to /predict.
   *
   * The caller passes the already-serialized body so the request echo shown
   * to the clinician is byte for byte what went over the wire.
   */
  async predict(
    body: string,
    signal?: AbortSignal,
  ): Promise<PredictionResponse> {
    const response = await this.transport(this.base + "/predict", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body,
      signal,
    });
    const parsed = parseBody(response.text);
    if (response.status !== 200) {
      throw new ApiError(response.status, detailOf(parsed, response.text));
    }
    return parsed as PredictionResponse;
  }
}
