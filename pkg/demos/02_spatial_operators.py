"""Tour of the deterministic spatial operators: kNN, ball query, farthest
point sampling, and random dropout, on a noisy torus.

Run:  python demos/02_spatial_operators.py
"""

import numpy as np

from sknet.data import generate_synthetic
from sknet.geometry import (ball_query, farthest_point_sampling, gather_group,
                            knn_query, random_dropout_sample)

rng = np.random.default_rng(7)
cloud = generate_synthetic("torus", 400, noise_sigma=0.01, rng=rng)
points = cloud.coords
queries = points[:3]

knn = knn_query(points, queries, k=5)
print("kNN(5) members per query:")
for j, row in enumerate(knn.members):
    d = np.linalg.norm(points[row] - queries[j], axis=1)
    print(f"  query {j}: indices {row.tolist()}  distances {np.round(d, 3).tolist()}")

ball = ball_query(points, queries, radius=0.15, max_samples=5)
print("ball query r=0.15 (rows pad by repeating the nearest member):")
for j, row in enumerate(ball.members):
    print(f"  query {j}: {row.tolist()}")

grouped = gather_group(points, knn)
print(f"gathered region tensor: {grouped.shape} (M x S x 3)")
print(f"region centroids (the 'normalized' locations): "
      f"{np.round(grouped.mean(axis=1)[0], 3).tolist()}")

# FPS spreads picks out; random dropout does not try to
fps_idx = farthest_point_sampling(points, 12)
rnd_idx = random_dropout_sample(points, 12, rng)


def min_pairwise(idx):
    p = points[idx]
    d2 = ((p[:, None] - p[None]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))


print(f"min pairwise distance, FPS pick:    {min_pairwise(fps_idx):.3f}")
print(f"min pairwise distance, random pick: {min_pairwise(rnd_idx):.3f}")
print(f"FPS is deterministic: "
      f"{np.array_equal(fps_idx, farthest_point_sampling(points, 12))}")
