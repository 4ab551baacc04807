/**
 * The what-if session state machine, kept free of DOM concerns so the
 * whole edit -> predict -> explain -> counterfactual -> apply loop is
 * testable headless.
 *
 * Request sequencing: each predict/shap call carries a sequence number and
 * a stale response (superseded by a newer committed edit) is discarded, so
 * the rendered prediction always corresponds to the latest committed edits.
 */

import type {
  CounterfactualResponse,
  InstanceDoc,
  ModelMeta,
  PredictResponse,
  ServiceClient,
  ShapResponse,
} from "./api.js";
import { featureByName, validateValue, type ValidationProblem } from "./domains.js";

export interface Snapshot {
  instance: InstanceDoc;
  prediction: PredictResponse | null;
}

export interface DebugEntry {
  endpoint: string;
  response: unknown;
}

function cloneInstance(instance: InstanceDoc): InstanceDoc {
  return JSON.parse(JSON.stringify(instance)) as InstanceDoc;
}

export class WhatIfStore {
  readonly meta: ModelMeta;
  instance: InstanceDoc;
  lastPrediction: PredictResponse | null = null;
  lastShap: ShapResponse | null = null;
  pendingCounterfactual: CounterfactualResponse | null = null;
  readonly history: Snapshot[] = [];
  readonly debugLog: DebugEntry[] = [];
  readonly sessionSeed: number;
  onChange: (() => void) | null = null;

  private readonly api: ServiceClient;
  private predictSeq = 0;
  private acceptedPredictSeq = 0;
  private dirty = true; // the initial instance has never been predicted

  constructor(api: ServiceClient, meta: ModelMeta, instance: InstanceDoc, sessionSeed = 7) {
    this.api = api;
    this.meta = meta;
    this.instance = cloneInstance(instance);
    this.sessionSeed = sessionSeed;
  }

  private changed(): void {
    this.onChange?.();
  }

  private record(endpoint: string, response: unknown): void {
    this.debugLog.push({ endpoint, response });
    if (this.debugLog.length > 50) this.debugLog.shift();
  }

  /**
   * Apply one feature edit across all timesteps (features are patient
   * attributes here). Returns a validation problem instead of editing when
   * the value is outside the domain published by /model/meta.
   */
  editFeature(name: string, value: number | string): ValidationProblem | null {
    const spec = featureByName(this.meta, name);
    if (!spec) return { feature: name, message: `unknown feature ${name}` };
    const problem = validateValue(spec, value);
    if (problem) return problem;
    const current = this.instance.timesteps[0]?.[spec.csv_column];
    const normalized = spec.kind === "categorical" ? value : Number(value);
    const same = this.instance.timesteps.every((s) => s[spec.csv_column] === normalized);
    if (same && current !== undefined) {
      return null; // no-op edit: nothing becomes dirty, no request will fire
    }
    for (const step of this.instance.timesteps) {
      step[spec.csv_column] = normalized;
    }
    this.dirty = true;
    this.changed();
    return null;
  }

  get hasUncommittedEdits(): boolean {
    return this.dirty;
  }

  /**
   * Predict the current instance. No-ops when nothing changed since the
   * last accepted prediction; stale responses are dropped by sequence
   * number.
   */
  async predict(): Promise<PredictResponse | null> {
    if (!this.dirty) return this.lastPrediction;
    const seq = ++this.predictSeq;
    const snapshot = cloneInstance(this.instance);
    const response = await this.api.predict(snapshot);
    if (seq < this.predictSeq) return null; // superseded by a newer edit set
    this.acceptedPredictSeq = seq;
    this.dirty = false;
    this.lastPrediction = response;
    this.lastShap = null; // attributions belong to the previous prediction
    this.history.push({ instance: snapshot, prediction: response });
    this.record("/predict", response);
    this.changed();
    return response;
  }

  /** Kernel SHAP at the fixed session seed so repeated views are stable. */
  async fetchShap(reseed?: number): Promise<ShapResponse> {
    if (!this.lastPrediction) throw new Error("predict before requesting attributions");
    const response = await this.api.shap(this.instance, {
      method: "kernel",
      seed: reseed ?? this.sessionSeed,
      target_class: this.lastPrediction.predicted_class,
    });
    this.lastShap = response;
    this.record("/explain/shap", response);
    this.changed();
    return response;
  }

  async requestCounterfactual(
    targetClass: number,
    mutableFeatures: string[],
  ): Promise<CounterfactualResponse> {
    const immutable = mutableFeatures.filter((f) => this.meta.immutable_features.includes(f));
    if (immutable.length > 0) {
      throw new Error(`immutable features cannot be mutated: ${immutable.join(", ")}`);
    }
    const response = await this.api.counterfactual(this.instance, targetClass, mutableFeatures);
    this.pendingCounterfactual = response;
    this.record("/explain/counterfactual", response);
    this.changed();
    return response;
  }

  /**
   * Copy the converged counterfactual's modified values into the editable
   * instance and re-predict, closing the what-if loop.
   */
  async applyCounterfactual(): Promise<PredictResponse | null> {
    const pending = this.pendingCounterfactual;
    if (!pending || !pending.converged) return null;
    this.instance = cloneInstance(pending.modified);
    this.instance.label = null;
    this.pendingCounterfactual = null;
    this.dirty = true;
    this.changed();
    return this.predict();
  }

  cancelCounterfactual(): void {
    this.pendingCounterfactual = null;
    this.changed();
  }

  /** Restore a history snapshot exactly (the history itself is append-only). */
  revert(index: number): void {
    const snapshot = this.history[index];
    if (!snapshot) return;
    this.instance = cloneInstance(snapshot.instance);
    this.lastPrediction = snapshot.prediction;
    this.lastShap = null;
    this.pendingCounterfactual = null;
    this.dirty = false;
    this.changed();
  }
}
