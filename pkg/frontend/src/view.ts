/**
 * Turn a prediction response into display-ready strings.
 *
 * Numbers are rendered verbatim: String(x) is the shortest decimal that
 * parses back to the same double, so what the clinician reads is exactly
 * what the service sent, with no rounding, padding or unit conversion done
 * on the client.
 */

import type { ModelMetadata, PredictionResponse } from "./api.js";

export function verbatim(value: number): string {
  return String(value);
}

export interface TreatmentRow {
  treatment: string;
  reference: boolean;
  probability: string;
  interval: string;
  oddsRatio: string;
  oddsInterval: string;
  /** Raw probability, used only to size the bar, never displayed. */
  fraction: number;
}

export interface BadgeView {
  /** The service's own risk group word, shown untouched. */
  label: string;
  /** Cutoff legend built from service metadata, not client constants. */
  legend: string;
}

export interface PredictionView {
  baselineRisk: string;
  baselineLogit: string;
  badge: BadgeView;
  rows: TreatmentRow[];
  /** The exact request body that produced this view. */
  requestEcho: string;
}

export function buildView(
  response: PredictionResponse,
  meta: ModelMetadata,
  requestBody: string,
): PredictionView {
  const referenceNames = new Set(
    meta.treatments.filter((t) => t.reference).map((t) => t.name),
  );
  const rows = [...response.treatments]
    .sort((a, b) => a.probability - b.probability)
    .map((t) => ({
      treatment: t.treatment,
      reference: referenceNames.has(t.treatment),
      probability: verbatim(t.probability),
      interval: `${verbatim(t.cr_low)} to ${verbatim(t.cr_high)}`,
      oddsRatio: verbatim(t.or_vs_reference),
      oddsInterval: `${verbatim(t.or_low)} to ${verbatim(t.or_high)}`,
      fraction: t.probability,
    }));
  const cutoffs = meta.risk_cutoffs;
  return {
    baselineRisk: verbatim(response.patient_risk),
    baselineLogit: verbatim(response.patient_logit_risk),
    badge: {
      label: response.risk_group,
      legend: `low < ${verbatim(cutoffs.low)}, high > ${verbatim(cutoffs.high)}`,
    },
    rows,
    requestEcho: requestBody,
  };
}
