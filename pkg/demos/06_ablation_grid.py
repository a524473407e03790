"""Matched-seed mini ablation: which feature branch carries the signal?

Trains the detail-only, pattern-only, and combined variants with identical
seeds on a small two-class task and prints the comparison (plus the CSV the
CLI's `ablate` verb would write).

Run:  python demos/06_ablation_grid.py
"""

from sknet.ablation import run_ablation, write_ablation_csv
from sknet.data import load_dataset, synthetic_manifest
from sknet.losses import LossConfig
from sknet.model import ModelConfig
from sknet.training import TrainConfig

classes = ("sphere", "box")
train_set = load_dataset(synthetic_manifest(classes, 16, 256, 0.02, seed_start=0))
test_set = load_dataset(synthetic_manifest(classes, 8, 256, 0.02, seed_start=32))

model_cfg = ModelConfig(
    n_points=256, n_skeypoints=16, detail_k=8, pattern_k=4,
    point_mlp_widths=(16, 32), skeypoint_fc_widths=(32, 32, 48),
    detail_mlp_widths=(16, 32), pattern_mlp_widths=(16, 32),
    pd_fc_widths=(32,), head_widths=(32,), n_classes=len(classes))
train_cfg = TrainConfig(epochs=12, batch_size=8, loss=LossConfig())

results = run_ablation("pd-features", model_cfg, LossConfig(), train_cfg,
                       train_set, test_set, seeds=(0,),
                       log=lambda r: print(f"  {r.variant:8s} seed {r.seed}: "
                                           f"acc {r.test_metric:.3f}"))
write_ablation_csv(results, "demo_out/ablation_pd_features.csv")
print("wrote demo_out/ablation_pd_features.csv "
      "(the external_som column stays empty for merged external baselines)")
