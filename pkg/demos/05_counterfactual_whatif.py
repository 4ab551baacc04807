"""Counterfactual search: what minimal change flips the prediction?

The search minimizes lambda * (p_target - 1)^2 plus a weighted L1 distance
(weights 1/MAD per feature), annealing lambda upward until the class flips.
Integer-grid features are refined to the closest flipping grid value;
demographics (age, gender) are never touched.
"""

from sleeplens import data as dio
from sleeplens import explain as ex
from sleeplens import training as tr
from sleeplens.models import predict_proba

cohort = dio.synth_generate(322, 7, seed=21)
split = tr.prepare_split(cohort, 300, 22, seed=21)
checkpoint, _ = tr.train(split, tr.TrainConfig(arch="lstm", seed=21, epochs=200))
stats = checkpoint.normalization_stats


def predicted(seq):
    probs = predict_proba(checkpoint, dio.encode_array(seq, stats)[None])[0]
    return dio.LABELS[int(probs.argmax())], float(probs.max())


# pick a predicted-disorder patient with high stress
instance = next(
    s for s in split.train
    if s.label != dio.NO_DISORDER
    and s.timesteps[-1].stress_level == 8.0
    and predicted(s)[0] != dio.NO_DISORDER
)
label, confidence = predicted(instance)
print(f"subject {instance.subject_id}: predicted {label} ({confidence:.2f})")
print(f"current stress level: {instance.timesteps[-1].stress_level:.0f}")

# --- stress-only intervention -------------------------------------------------
cf = ex.counterfactual_search(
    checkpoint, instance, target_class=0,
    config=ex.CounterfactualConfig(mutable_features=["stress_level"]),
)
print("\nstress-only search:", "converged" if cf.converged else "no flip found")
for feature, old, new in cf.changed_features:
    print(f"  {feature}: {old:.0f} -> {new:.0f}")
print(f"  new prediction: {cf.new_prediction['label']} "
      f"(p={cf.new_prediction['probability']:.2f}), distance {cf.distance:.3f}")

# --- free search over all mutable features -------------------------------------
cf_free = ex.counterfactual_search(checkpoint, instance, target_class=0)
print("\nunrestricted search changed:")
for feature, old, new in cf_free.changed_features:
    print(f"  {feature}: {old} -> {new}")
print(f"  distance {cf_free.distance:.3f} (weighted L1)")

# applying the suggestion closes the loop
verify_label, verify_p = predicted(cf.modified)
print(f"\nre-predicting the modified patient: {verify_label} ({verify_p:.2f})")
