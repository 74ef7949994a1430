/** Browser entry point: fetch model metadata, then mount the app. */

import { ApiClient, fetchTransport } from "./api.js";
import { WhatIfApp } from "./controller.js";

async function boot(): Promise<void> {
  const slot = document.getElementById("app") ?? document.body;
  const client = new ApiClient(fetchTransport());
  try {
    const meta = await client.getModel();
    const app = new WhatIfApp(document, client, meta);
    slot.replaceChildren(app.root);
  } catch (err) {
    const banner = document.createElement("div");
    banner.className = "banner";
    banner.textContent =
      "could not load model metadata: " +
      (err instanceof Error ? err.message : String(err));
    slot.replaceChildren(banner);
  }
}

void boot();
