/**
 * Bootstrap: fetch /model/meta, seed a default instance, wire the panels.
 * Served as static assets by `sleeplens serve --static-root frontend`.
 */

import { ServiceClient } from "./api.js";
import { defaultInstance } from "./domains.js";
import {
  renderCounterfactual,
  renderDebug,
  renderEditor,
  renderHistory,
  renderPrediction,
  renderShap,
} from "./render.js";
import { WhatIfStore } from "./state.js";

function mount(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing mount point #${id}`);
  return node;
}

async function boot(): Promise<void> {
  const base = window.location.origin;
  const api = new ServiceClient(base);
  const meta = await api.meta();
  const store = new WhatIfStore(api, meta, defaultInstance(meta));

  const editorRoot = mount("editor");
  const predictionRoot = mount("prediction");
  const shapRoot = mount("attributions");
  const cfRoot = mount("counterfactual");
  const historyRoot = mount("history");
  const debugRoot = mount("debug");
  const statusRoot = mount("status");

  statusRoot.textContent = `model ${meta.arch} (${meta.hash.slice(0, 12)})`;

  const redraw = () => {
    renderPrediction(store, predictionRoot);
    renderShap(store, shapRoot);
    renderCounterfactual(
      store,
      cfRoot,
      () => void store.applyCounterfactual(),
      () => store.cancelCounterfactual(),
    );
    renderHistory(store, historyRoot, (i) => store.revert(i));
    renderDebug(store, debugRoot);
  };
  store.onChange = redraw;

  renderEditor(meta, store, editorRoot, () => void store.predict());

  mount("shap-button").addEventListener("click", () => void store.fetchShap());
  mount("shap-reseed").addEventListener("click", () =>
    void store.fetchShap(Math.floor(Math.random() * 1_000_000)),
  );

  const targetSelect = mount("cf-target") as HTMLSelectElement;
  for (const [i, label] of meta.labels.entries()) {
    const option = document.createElement("option");
    option.value = String(i);
    option.textContent = label;
    targetSelect.append(option);
  }
  const mutableBox = mount("cf-mutable");
  for (const spec of meta.features) {
    if (!spec.model_input || !spec.mutable) continue;
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.value = spec.name;
    if (spec.name === "stress_level") box.checked = true;
    label.append(box, document.createTextNode(spec.name));
    mutableBox.append(label);
  }
  mount("cf-button").addEventListener("click", () => {
    const ticked = Array.from(
      mutableBox.querySelectorAll<HTMLInputElement>("input:checked"),
    ).map((b) => b.value);
    const target = Number(targetSelect.value);
    void store.requestCounterfactual(target, ticked).catch((err) => {
      cfRoot.textContent = `request failed: ${err.message}`;
    });
  });

  await store.predict();
  redraw();
}

void boot().catch((err) => {
  document.body.textContent = `failed to start: ${err}`;
});
