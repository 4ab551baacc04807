"""Train the three architectures on one synthetic benchmark and compare.

Mirrors the acceptance protocol at a reduced size so it runs in well under
a minute: stratified 300/22 split, preprocessing fitted on the training
side only, early stopping on a carved-out validation slice.
"""

import time

from sleeplens import data as dio
from sleeplens import training as tr

cohort = dio.synth_generate(322, 7, seed=21)
split = tr.prepare_split(cohort, train_n=300, test_n=22, seed=21)
print(f"train {len(split.train)}, test {len(split.test)}, "
      f"encoded width {dio.encoded_width(split.stats)}")

results = {}
for arch in ("lstm", "tcn", "tft"):
    cfg = tr.TrainConfig(arch=arch, seed=21, epochs=200)
    t0 = time.time()
    checkpoint, history = tr.train(split, cfg)
    metrics = tr.evaluate(checkpoint, split.test)
    results[arch] = (metrics, len(history), time.time() - t0)
    best = checkpoint.hyper["best_epoch"]
    print(f"{arch:5s} lr={cfg.learning_rate}  epochs run {len(history):3d} "
          f"(best at {best:3d})  test acc {metrics.accuracy:.3f}  "
          f"test loss {metrics.mean_loss:.3f}  [{results[arch][2]:.1f}s]")

print("\nconfusion matrix (lstm), rows = true None/Insomnia/Sleep Apnea:")
cfg = tr.TrainConfig(arch="lstm", seed=21, epochs=200)
checkpoint, history = tr.train(split, cfg)
print(tr.evaluate(checkpoint, split.test).confusion)

print("\nfirst epochs of the lstm run:")
for row in history[:5]:
    print(f"  epoch {row['epoch']}: train loss {row['train_loss']:.4f}, "
          f"val loss {row['val_loss']:.4f}")
