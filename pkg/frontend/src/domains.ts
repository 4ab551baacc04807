/**
 * Client-side validation against the domains published by /model/meta.
 * Edits that fail validation never become requests.
 */

import type { FeatureMeta, FeatureValue, InstanceDoc, ModelMeta } from "./api.js";

export interface ValidationProblem {
  feature: string;
  message: string;
}

export function featureByName(meta: ModelMeta, name: string): FeatureMeta | undefined {
  return meta.features.find((f) => f.name === name);
}

export function validateValue(spec: FeatureMeta, value: FeatureValue): ValidationProblem | null {
  if (value === null || value === "") {
    return { feature: spec.name, message: `${spec.name} requires a value` };
  }
  if (spec.kind === "categorical") {
    if (typeof value !== "string" || (spec.vocab && !spec.vocab.includes(value))) {
      return { feature: spec.name, message: `${spec.name} must be one of ${spec.vocab?.join(", ")}` };
    }
    return null;
  }
  const num = typeof value === "number" ? value : Number(value);
  if (!Number.isFinite(num)) {
    return { feature: spec.name, message: `${spec.name} must be a number` };
  }
  if (spec.kind === "ordinal" && !Number.isInteger(num)) {
    return { feature: spec.name, message: `${spec.name} must be an integer` };
  }
  if (spec.domain) {
    const [lo, hi] = spec.domain;
    if (num < lo || num > hi) {
      return { feature: spec.name, message: `${spec.name} must be within [${lo}, ${hi}]` };
    }
  }
  return null;
}

export function validateInstance(meta: ModelMeta, instance: InstanceDoc): ValidationProblem[] {
  const problems: ValidationProblem[] = [];
  for (const step of instance.timesteps) {
    for (const spec of meta.features) {
      if (spec.name === "physical_activity") continue; // derived server-side
      const key = spec.csv_column;
      if (key in step) {
        const problem = validateValue(spec, step[key] ?? null);
        if (problem && !problems.some((p) => p.feature === problem.feature)) {
          problems.push(problem);
        }
      }
    }
  }
  return problems;
}

/** A neutral starting instance built from domain midpoints and vocabularies. */
export function defaultInstance(meta: ModelMeta, timesteps = 7): InstanceDoc {
  const step: Record<string, FeatureValue> = {};
  for (const spec of meta.features) {
    if (spec.name === "physical_activity") continue;
    if (spec.kind === "categorical") {
      step[spec.csv_column] = spec.vocab?.[0] ?? "";
    } else if (spec.domain) {
      const [lo, hi] = spec.domain;
      const mid = (lo + hi) / 2;
      step[spec.csv_column] = spec.kind === "ordinal" ? Math.round(mid) : mid;
    } else {
      step[spec.csv_column] = 0;
    }
  }
  return {
    subject_id: "whatif",
    timesteps: Array.from({ length: timesteps }, () => ({ ...step })),
    label: null,
  };
}
