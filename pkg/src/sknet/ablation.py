"""Matched-seed ablation grids: feature branches, losses, sampling, keypoint
count, and unlearned keypoint baselines.

Each grid varies exactly one aspect of a base configuration and trains one
model per (variant, seed) pair with identical seeds across variants, so rows
are directly comparable. The CSV schema reserves an ``external_som`` column
so externally produced self-organizing-map baselines can be merged by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .losses import LossConfig
from .model import ModelConfig, SKNet
from .training import TrainConfig, train

ABLATION_MODES = ("pd-features", "losses", "sampling", "keypoint-count", "baselines")

CSV_HEADER = "mode,variant,seed,test_metric,external_som"


@dataclass
class AblationResult:
    mode: str
    variant: str
    seed: int
    test_metric: float

    def csv_row(self) -> str:
        return f"{self.mode},{self.variant},{self.seed},{self.test_metric!r},"


def _with_skeypoints(model: ModelConfig, m: int) -> ModelConfig:
    widths = model.skeypoint_fc_widths[:-1] + (3 * m,)
    return replace(model, n_skeypoints=m, skeypoint_fc_widths=widths)


def variant_grid(mode: str, model: ModelConfig, loss: LossConfig) -> list:
    """(variant name, model config, loss config) triples for one grid."""
    if mode == "pd-features":
        return [(v, replace(model, pd_branches=v), loss)
                for v in ("both", "detail", "pattern")]
    if mode == "losses":
        variants = [("task+sep+close", (1.0, 1.0)), ("task-only", (0.0, 0.0)),
                    ("task+sep", (1.0, 0.0)), ("task+close", (0.0, 1.0))]
        return [(name, model, replace(loss, weight_sep=ws, weight_close=wc))
                for name, (ws, wc) in variants]
    if mode == "sampling":
        return [("knn", replace(model, detail_sampler="knn"), loss),
                ("ball_r0.1", replace(model, detail_sampler="ball", ball_radius=0.1), loss),
                ("ball_r0.2", replace(model, detail_sampler="ball", ball_radius=0.2), loss)]
    if mode == "keypoint-count":
        counts = [m for m in (32, 64, 128, 192, 256) if m >= model.pattern_k]
        return [(f"M{m}", _with_skeypoints(model, m), loss) for m in counts]
    if mode == "baselines":
        return [(v, replace(model, keypoint_source=v), loss)
                for v in ("learned", "fps", "random")]
    raise ValueError(f"unknown ablation mode {mode!r} (choose from {ABLATION_MODES})")


def run_ablation(mode: str, model_cfg: ModelConfig, loss_cfg: LossConfig,
                 train_cfg: TrainConfig, train_set: Sequence, test_set: Sequence,
                 seeds: Sequence[int] = (0, 1, 2), log=None) -> list:
    """Train the whole grid; returns one AblationResult per (variant, seed)."""
    results = []
    for variant, mcfg, lcfg in variant_grid(mode, model_cfg, loss_cfg):
        for seed in seeds:
            tcfg = replace(train_cfg, seed=seed, loss=lcfg)
            model = SKNet(mcfg, seed=seed)
            report = train(model, train_set, test_set, tcfg)
            best = report.best_row().test_metric
            results.append(AblationResult(mode, variant, seed, best))
            if log is not None:
                log(results[-1])
    return results


def write_ablation_csv(results: Sequence[AblationResult], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in results:
            fh.write(r.csv_row() + "\n")
