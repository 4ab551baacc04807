/**
 * Typed client for the sleeplens HTTP service.
 *
 * Field names mirror the CSV schema exactly, so UI form fields, request
 * bodies, and data files share one vocabulary. The client performs no
 * numeric work of its own.
 */

export type FeatureValue = number | string | null;

export interface TimestepDoc {
  [feature: string]: FeatureValue;
}

export interface InstanceDoc {
  subject_id: string;
  timesteps: TimestepDoc[];
  label: string | null;
}

export interface FeatureMeta {
  name: string;
  csv_column: string;
  kind: "continuous" | "ordinal" | "categorical";
  mutable: boolean;
  model_input: boolean;
  domain?: [number, number];
  vocab?: string[];
}

export interface ModelMeta {
  arch: string;
  schema_version: number;
  seed: number;
  hash: string;
  labels: string[];
  features: FeatureMeta[];
  immutable_features: string[];
  encoded_width: number;
  background_size: number;
}

export interface PredictResponse {
  model_hash: string;
  probs: Record<string, number>;
  predicted_class: number;
  predicted_label: string;
  attention_scores: number[] | null;
}

export interface ShapResponse {
  kind: "shap_report";
  method: string;
  target_class: number;
  target_label: string;
  base_value: number;
  model_output: number;
  efficiency_residual: number;
  background_size: number;
  seed: number | null;
  feature_names: string[];
  timestep_labels: (number | string)[];
  attributions: number[][];
  model_hash: string;
}

export interface ChangedFeature {
  feature: string;
  old: FeatureValue;
  new: FeatureValue;
}

export interface CounterfactualResponse {
  kind: "counterfactual";
  converged: boolean;
  target_class: number;
  target_label: string;
  original_prediction: { class_index: number; label: string; probability: number };
  new_prediction: { class_index: number; label: string; probability: number };
  distance: number;
  changed_features: ChangedFeature[];
  original: InstanceDoc;
  modified: InstanceDoc;
  model_hash: string;
}

export interface ApiError {
  status: number;
  error: string;
  field?: string;
}

export class ServiceError extends Error {
  readonly status: number;
  readonly field?: string;

  constructor(payload: ApiError) {
    super(payload.error);
    this.status = payload.status;
    this.field = payload.field;
  }
}

async function throwFrom(response: Response): Promise<never> {
  let message = response.statusText;
  let field: string | undefined;
  try {
    const body = (await response.json()) as { error?: string; field?: string };
    message = body.error ?? message;
    field = body.field;
  } catch {
    /* non-JSON error body; keep statusText */
  }
  throw new ServiceError({ status: response.status, error: message, field });
}

export class ServiceClient {
  constructor(private readonly baseUrl: string, private readonly fetchFn: typeof fetch = fetch) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) await throwFrom(response);
    return (await response.json()) as T;
  }

  async meta(): Promise<ModelMeta> {
    const response = await this.fetchFn(this.baseUrl + "/model/meta");
    if (!response.ok) await throwFrom(response);
    return (await response.json()) as ModelMeta;
  }

  predict(instance: InstanceDoc): Promise<PredictResponse> {
    return this.post<PredictResponse>("/predict", { instance });
  }

  /** Kernel SHAP by default; a 413 on an exact request falls back to kernel. */
  async shap(
    instance: InstanceDoc,
    options: { method?: "exact" | "kernel"; seed?: number; n_samples?: number; target_class?: number },
  ): Promise<ShapResponse> {
    const body = { instance, method: options.method ?? "kernel", ...options };
    try {
      return await this.post<ShapResponse>("/explain/shap", body);
    } catch (err) {
      if (err instanceof ServiceError && err.status === 413 && body.method === "exact") {
        return this.post<ShapResponse>("/explain/shap", { ...body, method: "kernel" });
      }
      throw err;
    }
  }

  counterfactual(
    instance: InstanceDoc,
    target_class: number,
    mutable_features: string[],
    config?: Record<string, number | boolean>,
  ): Promise<CounterfactualResponse> {
    return this.post<CounterfactualResponse>("/explain/counterfactual", {
      instance,
      target_class,
      mutable_features,
      config,
    });
  }
}
