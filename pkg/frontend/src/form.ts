/**
 * Derive an input form description from the service's model metadata.
 *
 * Everything here is pure data: the DOM layer renders whatever this module
 * produces. One field per model covariate, in the order the service lists
 * them. Numeric fields always carry explicit bounds so the form never
 * exposes an unbounded free-text number box; the service metadata does not
 * publish per-covariate ranges, so a deliberately wide fixed range is used
 * and the service stays the authority that rejects anything it cannot
 * score.
 */

import type {
  ModelMetadata,
  RiskCutoffs,
  TreatmentDescriptor,
} from "./api.js";

export const NUMERIC_MIN = -1e6;
export const NUMERIC_MAX = 1e6;

export interface NumberField {
  kind: "number";
  name: string;
  label: string;
  min: number;
  max: number;
}

export interface SelectField {
  kind: "select";
  name: string;
  label: string;
  options: string[];
  preselected: string;
  /** True when the chosen option must be sent as a number (0/1 flags). */
  numeric: boolean;
}

export type Field = NumberField | SelectField;

export interface FormSchema {
  fields: Field[];
  /**
   * Metadata defects, one message per covariate the form cannot represent.
   * A non-empty list means the form must be shown disabled behind a banner:
   * a partial patient would silently misdescribe the person being scored.
   */
  problems: string[];
  treatments: TreatmentDescriptor[];
  cutoffs: RiskCutoffs;
}

export function buildForm(meta: ModelMetadata): FormSchema {
  const fields: Field[] = [];
  const problems: string[] = [];
  for (const cov of meta.covariates) {
    if (cov.kind === "continuous") {
      fields.push({
        kind: "number",
        name: cov.name,
        label: cov.name,
        min: NUMERIC_MIN,
        max: NUMERIC_MAX,
      });
    } else if (cov.kind === "categorical") {
      const options = cov.categories ?? [];
      if (options.length === 0) {
        problems.push(`categorical covariate "${cov.name}" lists no categories`);
        continue;
      }
      const reference = cov.reference_level;
      const preselected =
        reference != null && options.includes(reference)
          ? reference
          : options[0]!;
      fields.push({
        kind: "select",
        name: cov.name,
        label: cov.name,
        options,
        preselected,
        numeric: false,
      });
    } else if (cov.kind === "indicator") {
      fields.push({
        kind: "select",
        name: cov.name,
        label: cov.name,
        options: ["0", "1"],
        preselected: "0",
        numeric: true,
      });
    } else {
      problems.push(
        `covariate "${cov.name}" has unsupported kind "${cov.kind}"`,
      );
    }
  }
  return {
    fields,
    problems,
    treatments: meta.treatments,
    cutoffs: meta.risk_cutoffs,
  };
}
