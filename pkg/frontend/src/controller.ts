/**
 * Application controller: owns the what-if loop.
 *
 * Every form edit submits exactly one /predict request. At most one request
 * is in flight; starting a new one aborts the old, and a reply is rendered
 * only if no newer submission has started, so the screen always reflects
 * the most recent form state.
 */

import { ApiClient, ApiError, type ModelMetadata } from "./api.js";
import { bindForm, renderView, type FormBinding } from "./dom.js";
import { buildForm, type FormSchema } from "./form.js";
import { buildView } from "./view.js";

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export class WhatIfApp {
  readonly root: HTMLElement;

  private readonly schema: FormSchema;
  private readonly form: FormBinding | null = null;
  private readonly banner: HTMLElement;
  private readonly status: HTMLElement;
  private readonly staleNotice: HTMLElement;
  private readonly retryButton: HTMLButtonElement;
  private readonly resultSlot: HTMLElement;
  private readonly blocked: boolean;
  private seq = 0;
  private inflight: AbortController | null = null;

  constructor(
    private readonly doc: Document,
    private readonly client: ApiClient,
    private readonly meta: ModelMetadata,
  ) {
    this.root = doc.createElement("div");
    this.root.className = "app";

    this.banner = doc.createElement("div");
    this.banner.className = "banner";
    this.banner.hidden = true;
    this.root.appendChild(this.banner);

    this.schema = buildForm(meta);
    const noCovariates =
      this.schema.fields.length === 0 && this.schema.problems.length === 0;
    this.blocked = noCovariates || this.schema.problems.length > 0;

    if (noCovariates) {
      this.showBanner(
        "the model metadata lists no covariates, so there is nothing to enter",
      );
    } else {
      this.form = bindForm(doc, this.schema, () => void this.submit());
      this.root.appendChild(this.form.root);
      if (this.schema.problems.length > 0) {
        this.showBanner(
          "the model metadata cannot be rendered: " +
            this.schema.problems.join("; "),
        );
        this.form.setDisabled(true);
      }
    }

    this.status = doc.createElement("div");
    this.status.className = "status";
    this.root.appendChild(this.status);

    this.retryButton = doc.createElement("button");
    this.retryButton.type = "button";
    this.retryButton.className = "retry";
    this.retryButton.textContent = "retry";
    this.retryButton.hidden = true;
    this.retryButton.addEventListener("click", () => void this.submit());
    this.root.appendChild(this.retryButton);

    this.staleNotice = doc.createElement("div");
    this.staleNotice.className = "stale-notice";
    this.staleNotice.textContent =
      "showing an earlier result; the latest request did not complete";
    this.staleNotice.hidden = true;
    this.root.appendChild(this.staleNotice);

    this.resultSlot = doc.createElement("div");
    this.resultSlot.className = "result-slot";
    this.root.appendChild(this.resultSlot);
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.hidden = false;
  }

  private setStatus(message: string): void {
    this.status.textContent = message;
  }

  private setStale(stale: boolean): void {
    this.staleNotice.hidden = !stale;
    this.resultSlot.classList.toggle("stale", stale);
  }

  /** Submit the current form state: exactly one request per invocation. */
  async submit(): Promise<void> {
    const form = this.form;
    if (form === null || this.blocked) {
      return;
    }
    form.clearFieldErrors();
    const reading = form.read();
    if (reading.problems.length > 0) {
      for (const problem of reading.problems) {
        form.setFieldError(problem.name, problem.message);
      }
      this.setStatus("");
      return;
    }

    const body = JSON.stringify({ covariates: reading.values });
    const id = ++this.seq;
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.setStatus("requesting prediction");
    this.retryButton.hidden = true;

    try {
      const response = await this.client.predict(body, controller.signal);
      if (id !== this.seq) {
        return;
      }
      this.setStatus("");
      this.setStale(false);
      renderView(this.doc, this.resultSlot, buildView(response, this.meta, body));
    } catch (err) {
      if (id !== this.seq || controller.signal.aborted) {
        return;
      }
      if (err instanceof ApiError && err.status === 400) {
        this.reportRejection(err.detail);
        return;
      }
      this.setStatus("request failed: " + describe(err));
      this.setStale(true);
      this.retryButton.hidden = false;
    } finally {
      if (this.inflight === controller) {
        this.inflight = null;
      }
    }
  }

  /** Attach a service rejection to the field it names, if any. */
  private reportRejection(detail: string): void {
    const form = this.form;
    const named = this.schema.fields.filter((f) => detail.includes(f.name));
    if (form !== null && named.length > 0) {
      for (const field of named) {
        form.setFieldError(field.name, detail);
      }
      this.setStatus("");
    } else {
      this.setStatus(detail);
    }
  }
}
