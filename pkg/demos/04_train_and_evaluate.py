"""Train a small classifier on the synthetic shapes and probe its robustness.

A scaled-down run (2 classes, short schedule) so the demo finishes in about a
minute; the full four-class benchmark lives in sknet.presets.

Run:  python demos/04_train_and_evaluate.py
"""

from sknet.data import load_dataset, synthetic_manifest
from sknet.losses import LossConfig
from sknet.model import ModelConfig, SKNet
from sknet.training import TrainConfig, evaluate, train

classes = ("sphere", "torus")
train_set = load_dataset(synthetic_manifest(classes, 24, 256, 0.02, seed_start=0))
test_set = load_dataset(synthetic_manifest(classes, 8, 256, 0.02, seed_start=48))

config = ModelConfig(
    n_points=256, n_skeypoints=32, detail_k=8, pattern_k=4,
    point_mlp_widths=(16, 32, 64), skeypoint_fc_widths=(64, 64, 96),
    detail_mlp_widths=(16, 32, 64), pattern_mlp_widths=(16, 32, 64),
    pd_fc_widths=(64,), head_widths=(64,), n_classes=len(classes))
model = SKNet(config, seed=0)

print(f"training {len(train_set)} clouds, testing on {len(test_set)}")
report = train(model, train_set, test_set,
               TrainConfig(epochs=20, batch_size=8, seed=0, loss=LossConfig()),
               log=lambda r: print(
                   f"  epoch {r.epoch}: total {r.loss_total:.3f} "
                   f"(task {r.loss_task:.3f}, sep {r.loss_sep:.4f}, "
                   f"close {r.loss_close:.4f})  test acc {r.test_metric:.3f}"))

best = report.best_row()
print(f"best epoch {best.epoch}: accuracy {best.test_metric:.3f}, "
      f"keypoint spread^2 {best.skeypoint_spread_sq:.4f}, "
      f"closeness {best.skeypoint_closeness:.3f}")

print("\nrobustness probes on the kept (best) weights:")
for ratio in (0.0, 0.5):
    m = evaluate(model, test_set, dropout_ratio=ratio, seed=0)
    print(f"  input dropout {ratio:.0%} ({m['n_points']} points): acc {m['value']:.3f}")
for sigma in (0.0, 0.3):
    m = evaluate(model, test_set, skeypoint_noise_sigma=sigma, seed=0)
    print(f"  keypoint noise sigma={sigma}: acc {m['value']:.3f}")
