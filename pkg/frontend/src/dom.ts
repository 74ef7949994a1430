/**
 * DOM construction for the form and the prediction display.
 *
 * This layer is deliberately dumb: it renders the FormSchema and
 * PredictionView structures exactly as given. Input handling converts text
 * to the wire types and checks bounds; nothing here computes a displayed
 * number.
 */

import type { Field, FormSchema } from "./form.js";
import type { PredictionView } from "./view.js";

export interface FieldProblem {
  name: string;
  message: string;
}

export interface FormReading {
  values: Record<string, number | string>;
  problems: FieldProblem[];
}

export interface FormBinding {
  root: HTMLFormElement;
  read(): FormReading;
  setFieldError(name: string, message: string): void;
  clearFieldErrors(): void;
  setDisabled(disabled: boolean): void;
}

function numberControl(doc: Document, field: Field & { kind: "number" }) {
  const input = doc.createElement("input");
  input.type = "number";
  input.name = field.name;
  input.min = String(field.min);
  input.max = String(field.max);
  input.step = "any";
  return input;
}

function selectControl(doc: Document, field: Field & { kind: "select" }) {
  const select = doc.createElement("select");
  select.name = field.name;
  for (const optionValue of field.options) {
    const option = doc.createElement("option");
    option.value = optionValue;
    option.textContent = optionValue;
    if (optionValue === field.preselected) {
      option.selected = true;
    }
    select.appendChild(option);
  }
  return select;
}

/**
 * Render the form and wire a single delegated "input" listener, so one user
 * edit triggers onChange exactly once regardless of control type.
 */
export function bindForm(
  doc: Document,
  schema: FormSchema,
  onChange: () => void,
): FormBinding {
  const root = doc.createElement("form");
  root.className = "patient-form";
  root.addEventListener("submit", (event) => event.preventDefault());

  const controls = new Map<string, HTMLInputElement | HTMLSelectElement>();
  const errors = new Map<string, HTMLElement>();

  for (const field of schema.fields) {
    const wrapper = doc.createElement("label");
    wrapper.className = "field";
    const caption = doc.createElement("span");
    caption.className = "field-name";
    caption.textContent = field.label;
    wrapper.appendChild(caption);

    const control =
      field.kind === "number"
        ? numberControl(doc, field)
        : selectControl(doc, field);
    wrapper.appendChild(control);
    controls.set(field.name, control);

    const error = doc.createElement("span");
    error.className = "field-error";
    error.hidden = true;
    wrapper.appendChild(error);
    errors.set(field.name, error);

    root.appendChild(wrapper);
  }

  root.addEventListener("input", () => onChange());

  return {
    root,
    read(): FormReading {
      const values: Record<string, number | string> = {};
      const problems: FieldProblem[] = [];
      for (const field of schema.fields) {
        const control = controls.get(field.name)!;
        if (field.kind === "number") {
          const raw = control.value.trim();
          if (raw === "") {
            problems.push({ name: field.name, message: "enter a value" });
            continue;
          }
          const parsed = Number(raw);
          if (!Number.isFinite(parsed)) {
            problems.push({ name: field.name, message: "not a number" });
            continue;
          }
          if (parsed < field.min || parsed > field.max) {
            problems.push({
              name: field.name,
              message: `must be between ${field.min} and ${field.max}`,
            });
            continue;
          }
          values[field.name] = parsed;
        } else {
          values[field.name] = field.numeric
            ? Number(control.value)
            : control.value;
        }
      }
      return { values, problems };
    },
    setFieldError(name: string, message: string): void {
      const error = errors.get(name);
      if (error) {
        error.textContent = message;
        error.hidden = false;
      }
    },
    clearFieldErrors(): void {
      for (const error of errors.values()) {
        error.textContent = "";
        error.hidden = true;
      }
    },
    setDisabled(disabled: boolean): void {
      for (const control of controls.values()) {
        control.disabled = disabled;
      }
    },
  };
}

/** Replace the container's content with the rendered prediction. */
export function renderView(
  doc: Document,
  container: HTMLElement,
  view: PredictionView,
): void {
  const section = doc.createElement("section");
  section.className = "result";

  const baseline = doc.createElement("div");
  baseline.className = "baseline";
  const risk = doc.createElement("span");
  risk.className = "baseline-risk";
  risk.textContent = view.baselineRisk;
  const logitSpan = doc.createElement("span");
  logitSpan.className = "baseline-logit";
  logitSpan.textContent = view.baselineLogit;
  const badge = doc.createElement("span");
  badge.className = `badge badge-${view.badge.label}`;
  badge.textContent = view.badge.label;
  const legend = doc.createElement("span");
  legend.className = "badge-legend";
  legend.textContent = view.badge.legend;
  baseline.append(risk, logitSpan, badge, legend);
  section.appendChild(baseline);

  const bars = doc.createElement("ol");
  bars.className = "bars";
  for (const row of view.rows) {
    const item = doc.createElement("li");
    item.className = row.reference ? "bar reference" : "bar";
    item.dataset.treatment = row.treatment;

    const name = doc.createElement("span");
    name.className = "treatment";
    name.textContent = row.treatment;
    const probability = doc.createElement("span");
    probability.className = "probability";
    probability.textContent = row.probability;
    const interval = doc.createElement("span");
    interval.className = "interval";
    interval.textContent = row.interval;
    const odds = doc.createElement("span");
    odds.className = "odds-ratio";
    odds.textContent = row.oddsRatio;
    const oddsInterval = doc.createElement("span");
    oddsInterval.className = "odds-interval";
    oddsInterval.textContent = row.oddsInterval;
    const fill = doc.createElement("div");
    fill.className = "bar-fill";
    fill.style.width = `${row.fraction * 100}%`;

    item.append(name, probability, interval, odds, oddsInterval, fill);
    bars.appendChild(item);
  }
  section.appendChild(bars);

  const echo = doc.createElement("pre");
  echo.className = "request-echo";
  echo.textContent = view.requestEcho;
  section.appendChild(echo);

  container.replaceChildren(section);
}
