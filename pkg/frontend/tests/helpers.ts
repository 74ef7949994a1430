/** Shared fixtures: model metadata, scripted responses, transport recorder. */

import type {
  ModelMetadata,
  PredictionResponse,
  Transport,
  TransportRequest,
  TransportResponse,
} from "../src/api.js";

/**
 * Metadata with deliberately non-default cutoffs (0.25/0.6) so any
 * hard-coded 0.30/0.50 in the interface would show up as a test failure.
 */
export function metadataFixture(
  overrides: Partial<ModelMetadata> = {},
): ModelMetadata {
  return {
    version: "0.1.0",
    covariates: [
      { name: "age", kind: "continuous" },
      { name: "edss", kind: "continuous" },
      {
        name: "region",
        kind: "categorical",
        categories: ["EU", "US", "ASIA"],
        reference_level: "EU",
      },
      { name: "sex=M", kind: "indicator", source: "sex" },
      { name: "prior_relapses", kind: "continuous" },
    ],
    treatments: [
      { name: "P", reference: true },
      { name: "DF", reference: false },
      { name: "GA", reference: false },
      { name: "NAT", reference: false },
    ],
    risk_cutoffs: { low: 0.25, high: 0.6 },
    stage1_method: "lasso",
    stage1_fingerprint: "f" + "0".repeat(63),
    n_posterior_draws: 1800,
    ...overrides,
  };
}

export interface RecordedCall {
  url: string;
  request: TransportRequest;
}

/** Transport that records every exchange and delegates to a handler. */
export function recordingTransport(
  handler: (
    url: string,
    request: TransportRequest,
    call: number,
  ) => TransportResponse | Promise<TransportResponse>,
): { transport: Transport; calls: RecordedCall[] } {
  const calls: RecordedCall[] = [];
  const transport: Transport = async (url, request) => {
    calls.push({ url, request });
    return handler(url, request, calls.length - 1);
  };
  return { transport, calls };
}

export function ok(payload: unknown): TransportResponse {
  return { status: 200, text: JSON.stringify(payload) };
}

export function badRequest(detail: string): TransportResponse {
  return { status: 400, text: JSON.stringify({ detail }) };
}

/** Let pending promise chains and DOM event handlers settle. */
export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

export interface ScriptedCase {
  /** Raw strings to place into the form controls, keyed by field name. */
  entries: Record<string, string>;
  /** Covariates object the controller should send. */
  sent: Record<string, number | string>;
  response: PredictionResponse;
}

/**
 * Ten patients with machine-precision doubles in every numeric slot, so a
 * renderer that rounds, truncates or recomputes anything cannot pass.
 */
export function scriptedCases(): ScriptedCase[] {
  const names = ["P", "DF", "GA", "NAT"];
  const regions = ["EU", "US", "ASIA"];
  const groups = ["low", "mid", "high"];
  const cases: ScriptedCase[] = [];
  for (let i = 0; i < 10; i++) {
    const age = 18 + i * 7.1234567891;
    const edss = 0.5 + i / 3;
    const region = regions[i % 3]!;
    const male = i % 2;
    const relapses = i % 4;
    const risk = 0.07 + i * 0.083 + i * 1e-12;
    const treatments = names.map((name, k) => {
      // (7k + i) mod 4 is a permutation over k, so the four probabilities
      // are distinct and their rank order varies from patient to patient
      const p = 0.04 + i * 0.0137 + ((7 * k + i) % 4) * 0.11 + (k + 1) / 3e7;
      const or = k === 0 ? 1.0 : Math.exp((k - 1.5) * 0.3171 + i * 0.01);
      return {
        treatment: name,
        probability: p,
        cr_low: p * 0.7321098765,
        cr_high: Math.min(0.99, p * 1.2345678901),
        or_vs_reference: or,
        or_low: or * 0.654321,
        or_high: or * 1.543219876,
      };
    });
    cases.push({
      entries: {
        age: String(age),
        edss: String(edss),
        region,
        "sex=M": String(male),
        prior_relapses: String(relapses),
      },
      sent: {
        age,
        edss,
        region,
        "sex=M": male,
        prior_relapses: relapses,
      },
      response: {
        patient_logit_risk: Math.log(risk / (1 - risk)),
        patient_risk: risk,
        risk_group: groups[i % 3]!,
        treatments,
      },
    });
  }
  // hand-picked awkward doubles on top of the generated ones
  const last = cases[9]!;
  last.response.treatments[1]!.probability = 0.1 + 0.2;
  last.response.treatments[1]!.cr_low = 1 / 3;
  last.response.treatments[1]!.cr_high = 2 / 3;
  return cases;
}
