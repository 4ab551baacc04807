"""Explain a trained model: Shapley attributions and attention traces.

The whole-sequence explainer attributes the prediction across the 13 model
features by exact coalition enumeration (2^13 coalitions, masked against a
training background). The per-timestep variant switches to kernel sampling
because 7 timesteps x 13 features is far past exact enumeration.
"""

import numpy as np

from sleeplens import data as dio
from sleeplens import explain as ex
from sleeplens import training as tr

cohort = dio.synth_generate(322, 7, seed=21)
split = tr.prepare_split(cohort, 300, 22, seed=21)
checkpoint, _ = tr.train(split, tr.TrainConfig(arch="lstm", seed=21, epochs=200))

instance = next(s for s in split.test if s.label != dio.NO_DISORDER)
background = split.train[:25]
target = dio.label_index(instance.label)
print(f"explaining subject {instance.subject_id} (label {instance.label})\n")

# --- exact whole-sequence attribution ---------------------------------------
report = ex.shap_exact(checkpoint, instance, background, target)
print(f"base value {report.base_value:.4f}, model output {report.model_output:.4f}, "
      f"efficiency residual {report.efficiency_residual:.2e}")
order = np.argsort(-np.abs(report.per_feature()))
print("top features by |attribution|:")
for i in order[:5]:
    print(f"  {report.feature_names[i]:24s} {report.per_feature()[i]:+.4f}")

# --- kernel sampling agrees at a fraction of the cost ------------------------
kernel = ex.shap_kernel(checkpoint, instance, background, target, n_samples=2000, seed=0)
gap = np.abs(kernel.per_feature() - report.per_feature()).max()
print(f"\nkernel vs exact, max gap: {gap:.2e}")

# --- per-timestep resolution --------------------------------------------------
by_step = ex.shap_timestep_summary(checkpoint, instance, background, target,
                                   n_samples=2000, seed=0)
print(f"\nper-timestep matrix {by_step.matrix.shape} via {by_step.method};")
stress_col = by_step.feature_names.index("stress_level")
print("stress attribution per timestep:", np.round(by_step.matrix[:, stress_col], 4))

# --- where does the model look? ----------------------------------------------
trace = ex.attention_trace(checkpoint, instance)
print("\nattention weights:", np.round(trace.scores, 3), "(sum", round(trace.scores.sum(), 6), ")")
