"""Brute-force geometry oracles, independent of the library implementations.

Pure python loops over (distance, index) pairs; the library must match these
exactly, including the index tie-break and ball-query padding conventions.
"""

import numpy as np


def oracle_knn(points, queries, k):
    out = []
    for q in queries:
        ranked = sorted((sum((q[d] - p[d]) ** 2 for d in range(3)), j)
                        for j, p in enumerate(points))
        out.append([j for _, j in ranked[:k]])
    return np.array(out)


def oracle_ball(points, queries, radius, max_samples):
    out = []
    for q in queries:
        ranked = sorted((sum((q[d] - p[d]) ** 2 for d in range(3)), j)
                        for j, p in enumerate(points))
        inside = [j for d2, j in ranked if d2 <= radius * radius][:max_samples]
        if not inside:
            inside = [ranked[0][1]]
        out.append(inside + [inside[0]] * (max_samples - len(inside)))
    return np.array(out)
