/**
 * DOM rendering for the what-if panels. Pure view layer: reads the store,
 * never computes numbers — every value shown comes from a service response
 * (auditable via the debug pane).
 */

import type { ModelMeta } from "./api.js";
import type { WhatIfStore } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(x: number, digits = 3): string {
  return x.toFixed(digits);
}

export function renderPrediction(store: WhatIfStore, root: HTMLElement): void {
  root.replaceChildren();
  const prediction = store.lastPrediction;
  if (!prediction) {
    root.append(el("p", "hint", "No prediction yet - commit an edit."));
    return;
  }
  const headline = el("div", "headline");
  headline.append(
    el("span", "label", "Prediction: "),
    el("strong", `class-${prediction.predicted_class}`, prediction.predicted_label),
  );
  root.append(headline);

  const bars = el("div", "prob-bars");
  for (const label of store.meta.labels) {
    const p = prediction.probs[label] ?? 0;
    const row = el("div", "prob-row");
    row.append(el("span", "prob-name", label));
    const track = el("div", "bar-track");
    const fill = el("div", "bar-fill");
    fill.style.width = `${(p * 100).toFixed(1)}%`;
    track.append(fill);
    row.append(track, el("span", "prob-value", fmt(p)));
    bars.append(row);
  }
  root.append(bars);

  if (prediction.attention_scores) {
    root.append(el("h3", undefined, "Attention over timesteps"));
    const strip = el("div", "attention-strip");
    for (const [t, score] of prediction.attention_scores.entries()) {
      const cell = el("div", "attention-cell");
      const bar = el("div", "attention-bar");
      bar.style.height = `${Math.max(2, score * 160).toFixed(0)}px`;
      bar.title = `t=${t}: ${fmt(score)}`;
      cell.append(bar, el("span", "attention-label", String(t)));
      strip.append(cell);
    }
    root.append(strip);
  }
}

export function renderShap(store: WhatIfStore, root: HTMLElement): void {
  root.replaceChildren();
  const report = store.lastShap;
  if (!report) {
    root.append(el("p", "hint", "No attribution yet."));
    return;
  }
  const totals = report.feature_names.map((name, i) => ({
    name,
    value: report.attributions.reduce((acc, row) => acc + row[i], 0),
  }));
  totals.sort((a, b) => Math.abs(b.value) - Math.abs(a.value));
  const biggest = Math.max(1e-12, ...totals.map((t) => Math.abs(t.value)));

  root.append(
    el(
      "p",
      "shap-meta",
      `method ${report.method}, base ${fmt(report.base_value)}, ` +
        `model output ${fmt(report.model_output)}, residual ${report.efficiency_residual.toExponential(1)}`,
    ),
  );
  const list = el("div", "shap-bars");
  for (const { name, value } of totals) {
    const row = el("div", "shap-row");
    row.append(el("span", "shap-name", name));
    const track = el("div", "shap-track");
    const fill = el("div", value >= 0 ? "shap-fill positive" : "shap-fill negative");
    fill.style.width = `${((Math.abs(value) / biggest) * 50).toFixed(1)}%`;
    fill.style[value >= 0 ? "left" : "right"] = "50%";
    track.append(fill);
    row.append(track, el("span", "shap-value", fmt(value)));
    list.append(row);
  }
  root.append(list);
}

export function renderCounterfactual(
  store: WhatIfStore,
  root: HTMLElement,
  onApply: () => void,
  onCancel: () => void,
): void {
  root.replaceChildren();
  const cf = store.pendingCounterfactual;
  if (!cf) {
    root.append(el("p", "hint", "No pending suggestion."));
    return;
  }
  root.append(
    el(
      "p",
      cf.converged ? "cf-status converged" : "cf-status not-found",
      cf.converged
        ? `Suggestion flips to ${cf.new_prediction.label} (distance ${fmt(cf.distance)})`
        : "not found - best effort shown, apply disabled",
    ),
  );
  const table = el("table", "cf-diff");
  const head = el("tr");
  for (const title of ["feature", "old", "new"]) head.append(el("th", undefined, title));
  table.append(head);
  for (const change of cf.changed_features) {
    const row = el("tr");
    row.append(
      el("td", undefined, change.feature),
      el("td", undefined, String(change.old)),
      el("td", undefined, String(change.new)),
    );
    table.append(row);
  }
  root.append(table);

  const apply = el("button", "apply", "Apply suggestion");
  apply.disabled = !cf.converged;
  apply.addEventListener("click", onApply);
  const cancel = el("button", "cancel", "Discard");
  cancel.addEventListener("click", onCancel);
  root.append(apply, cancel);
}

export function renderHistory(store: WhatIfStore, root: HTMLElement, onRevert: (i: number) => void): void {
  root.replaceChildren();
  if (store.history.length === 0) {
    root.append(el("p", "hint", "History is empty."));
    return;
  }
  const list = el("ol", "history");
  for (const [i, snapshot] of store.history.entries()) {
    const item = el("li");
    item.append(
      el("span", undefined, snapshot.prediction ? `${snapshot.prediction.predicted_label}` : "(unpredicted)"),
    );
    const button = el("button", "revert", "revert");
    button.addEventListener("click", () => onRevert(i));
    item.append(button);
    list.append(item);
  }
  root.append(list);
}

export function renderDebug(store: WhatIfStore, root: HTMLElement): void {
  root.replaceChildren();
  for (const entry of [...store.debugLog].reverse().slice(0, 10)) {
    const block = el("details", "debug-entry");
    block.append(el("summary", undefined, entry.endpoint));
    block.append(el("pre", undefined, JSON.stringify(entry.response, null, 2)));
    root.append(block);
  }
}

export function renderEditor(
  meta: ModelMeta,
  store: WhatIfStore,
  root: HTMLElement,
  onCommit: () => void,
): void {
  root.replaceChildren();
  const form = el("div", "editor");
  for (const spec of meta.features) {
    if (spec.name === "physical_activity" || !spec.model_input) continue;
    const row = el("label", "editor-row");
    const caption = spec.mutable ? spec.name : `${spec.name} (immutable)`;
    row.append(el("span", "editor-name", caption));
    const current = store.instance.timesteps[0]?.[spec.csv_column];
    let input: HTMLInputElement | HTMLSelectElement;
    if (spec.kind === "categorical") {
      input = el("select");
      for (const option of spec.vocab ?? []) {
        const opt = el("option", undefined, option);
        opt.value = option;
        if (option === current) opt.selected = true;
        input.append(opt);
      }
    } else {
      input = el("input");
      input.type = "number";
      if (spec.domain) {
        input.min = String(spec.domain[0]);
        input.max = String(spec.domain[1]);
      }
      if (spec.kind === "ordinal") input.step = "1";
      input.value = String(current ?? "");
    }
    input.name = spec.name;
    input.addEventListener("change", () => {
      const raw = spec.kind === "categorical" ? input.value : Number(input.value);
      const problem = store.editFeature(spec.name, raw);
      const message = row.querySelector(".field-error");
      message?.remove();
      if (problem) {
        row.append(el("span", "field-error", problem.message));
      }
    });
    row.append(input);
    form.append(row);
  }
  const commit = el("button", "commit", "Predict");
  commit.addEventListener("click", onCommit);
  form.append(commit);
  root.append(form);
}
