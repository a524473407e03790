"""Canonical desk-scale benchmark: 4 synthetic shape classes, 400/100 split.

This is the configuration the acceptance checks train: N=512 points, M=64
keypoints, H=16 captured points, K=8 pattern neighbors, batch 16, 60 epochs.
Layer widths are scaled down from the full-size defaults so a CPU run stays
in the minutes range.
"""

from __future__ import annotations

from .data import load_dataset, synthetic_manifest
from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig

BENCHMARK_CLASSES = ("sphere", "box", "cylinder", "torus")
BENCHMARK_NOISE = 0.02
BENCHMARK_N_POINTS = 512
BENCHMARK_TRAIN_PER_CLASS = 100
BENCHMARK_TEST_PER_CLASS = 25


def benchmark_model_config(**overrides) -> ModelConfig:
    cfg = dict(
        n_points=BENCHMARK_N_POINTS,
        n_skeypoints=64,
        detail_k=16,
        pattern_k=8,
        point_mlp_widths=(32, 64, 128),
        skeypoint_fc_widths=(128, 128, 192),
        detail_mlp_widths=(32, 64, 128),
        pattern_mlp_widths=(32, 64, 128),
        pd_fc_widths=(128, 128),
        head_widths=(128, 64),
        n_classes=len(BENCHMARK_CLASSES),
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


def benchmark_train_config(**overrides) -> TrainConfig:
    cfg = dict(epochs=60, batch_size=16, lr=0.001, decay_rate=0.7,
               decay_epochs=20, seed=0, loss=LossConfig())
    cfg.update(overrides)
    return TrainConfig(**cfg)


def benchmark_datasets(seed: int = 0) -> tuple:
    """Materialized (train, test) splits with disjoint generation seeds."""
    base = 1_000_000 * (seed + 1)
    n_train = BENCHMARK_TRAIN_PER_CLASS * len(BENCHMARK_CLASSES)
    train_m = synthetic_manifest(BENCHMARK_CLASSES, BENCHMARK_TRAIN_PER_CLASS,
                                 BENCHMARK_N_POINTS, BENCHMARK_NOISE,
                                 seed_start=base, split="train")
    test_m = synthetic_manifest(BENCHMARK_CLASSES, BENCHMARK_TEST_PER_CLASS,
                                BENCHMARK_N_POINTS, BENCHMARK_NOISE,
                                seed_start=base + n_train, split="test")
    return load_dataset(train_m), load_dataset(test_m)
