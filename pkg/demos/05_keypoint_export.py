"""Export learned keypoints as a colored PLY for inspection.

Gray = input points, red = keypoints, orange = normalized keypoints (each
region's centroid). Any PLY viewer shows how keypoints spread over the shape.

Run:  python demos/05_keypoint_export.py   (writes ./demo_out/keypoints.ply)
"""

import os

import numpy as np

from sknet.data import load_dataset, synthetic_manifest, write_ply
from sknet.model import ModelConfig, SKNet
from sknet.training import TrainConfig, train

os.makedirs("demo_out", exist_ok=True)
classes = ("box", "torus")
train_set = load_dataset(synthetic_manifest(classes, 16, 256, 0.01, seed_start=0))
test_set = load_dataset(synthetic_manifest(classes, 6, 256, 0.01, seed_start=32))

config = ModelConfig(
    n_points=256, n_skeypoints=24, detail_k=8, pattern_k=4,
    point_mlp_widths=(16, 32, 64), skeypoint_fc_widths=(64, 64, 72),
    detail_mlp_widths=(16, 32, 64), pattern_mlp_widths=(16, 32, 64),
    pd_fc_widths=(64,), head_widths=(64,), n_classes=len(classes))
model = SKNet(config, seed=1)
train(model, train_set, test_set, TrainConfig(epochs=14, batch_size=8, seed=1))

cloud = test_set[-1]  # a torus
out = model.forward(cloud.coords[None], training=False)
sk = out.skeypoints[0]

coords = np.concatenate([cloud.coords, sk.skeypoints, sk.normalized])
colors = np.array([(128, 128, 128)] * cloud.n_points
                  + [(255, 0, 0)] * len(sk.skeypoints)
                  + [(255, 165, 0)] * len(sk.normalized))
write_ply("demo_out/keypoints.ply", coords, colors=colors)

d2 = ((sk.skeypoints[:, None] - sk.skeypoints[None]) ** 2).sum(-1)
np.fill_diagonal(d2, np.inf)
print(f"wrote demo_out/keypoints.ply ({coords.shape[0]} vertices)")
print(f"keypoint nearest-neighbor distance^2: mean {d2.min(axis=1).mean():.4f} "
      f"(separation threshold 0.05)")
inside = ((sk.normalized >= cloud.coords.min(0)) &
          (sk.normalized <= cloud.coords.max(0))).all()
print(f"normalized keypoints inside the cloud bounding box: {bool(inside)}")
