"""Learned spatial keypoints for point-cloud classification and segmentation.

A self-contained numpy stack: a small reverse-mode autodiff engine
(:mod:`sknet.autodiff`), deterministic spatial operators
(:mod:`sknet.geometry`), synthetic shape datasets and point-file IO
(:mod:`sknet.data`), the keypoint network (:mod:`sknet.model`), the two
regulating losses (:mod:`sknet.losses`), and the Adam trainer
(:mod:`sknet.training`). ``python -m sknet.cli`` (or the ``sknet`` script)
exposes training, evaluation, ablations, and keypoint export.
"""

from .autodiff import Tensor
from .data import PointCloud, generate_synthetic, load_point_file, normalize_unit_cube
from .geometry import (ball_query, farthest_point_sampling, gather_group,
                       knn_query, random_dropout_sample)
from .losses import LossConfig, close_loss, separation_loss, total_loss
from .model import ModelConfig, SKNet, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "PointCloud", "generate_synthetic", "load_point_file",
    "normalize_unit_cube", "ball_query", "farthest_point_sampling",
    "gather_group", "knn_query", "random_dropout_sample", "LossConfig",
    "close_loss", "separation_loss", "total_loss", "ModelConfig", "SKNet",
    "load_checkpoint", "save_checkpoint", "TrainConfig", "evaluate", "train",
]
