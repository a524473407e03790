"""Adam optimization, staircase LR decay, training/evaluation loops, metrics.

Everything is reproducible from the config seed: data shuffling, resampling,
dropout masks, and evaluation perturbations all draw from seeded generators,
and reductions run in a fixed order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import Batch, PointCloud, batch_iterator
from .losses import LossConfig, close_loss, separation_loss, total_loss
from .model import SKNet, ModelOutput


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; message carries the per-component values."""


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the shared step count."""
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.001


def init_optimizer(params: Sequence[ad.Tensor], lr: float = 0.001) -> OptimizerState:
    return OptimizerState(m=[np.zeros_like(p.data) for p in params],
                          v=[np.zeros_like(p.data) for p in params], lr=lr)


def adam_step(params: Sequence[ad.Tensor], grads: Sequence[Optional[np.ndarray]],
              state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    for i, g in enumerate(grads):
        if g is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient")
        if g.shape != params[i].data.shape:
            raise ValueError(f"adam_step: gradient {i} shape {g.shape} != "
                             f"parameter shape {params[i].data.shape}")
    state.t += 1
    b1c = 1.0 - state.beta1 ** state.t
    b2c = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return state


def lr_schedule(initial_lr: float, step: int, decay_rate: float, decay_steps: int) -> float:
    """Staircase exponential decay: lr = initial * rate**floor(step/decay_steps)."""
    if decay_steps < 1:
        raise ValueError(f"decay_steps must be >= 1, got {decay_steps}")
    return initial_lr * decay_rate ** (step // decay_steps)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 0.001
    decay_rate: float = 0.7
    decay_epochs: int = 20
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class EpochStats:
    epoch: int
    loss_total: float
    loss_task: float
    loss_sep: float
    loss_close: float
    train_accuracy: float
    test_metric: float
    skeypoint_spread_sq: float
    skeypoint_closeness: float
    wall_time_s: float


REPORT_COLUMNS = tuple(EpochStats.__dataclass_fields__)


@dataclass
class TrainReport:
    metric_name: str
    rows: list = field(default_factory=list)

    def best_row(self) -> EpochStats:
        return max(self.rows, key=lambda r: r.test_metric)

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
            for row in self.rows:
                d = asdict(row)
                fh.write(",".join(repr(d[c]) if isinstance(d[c], float) else str(d[c])
                                  for c in REPORT_COLUMNS) + "\n")


# ---------------------------------------------------------------------------
# Loss assembly and metrics
# ---------------------------------------------------------------------------

def task_loss_from_output(out: ModelOutput, batch: Batch, task: str) -> ad.Tensor:
    if task == "classification":
        return ad.softmax_cross_entropy(out.logits, batch.labels)
    if batch.point_labels is None:
        raise ValueError("segmentation training requires per-point labels")
    b, n, c = out.logits.data.shape
    flat = ad.reshape(out.logits, (b * n, c))
    return ad.softmax_cross_entropy(flat, batch.point_labels.reshape(-1))


def _batch_correct(out: ModelOutput, batch: Batch, task: str) -> tuple:
    if task == "classification":
        pred = out.logits.data.argmax(axis=1)
        return int((pred == batch.labels).sum()), batch.labels.size
    pred = out.logits.data.argmax(axis=2)
    return int((pred == batch.point_labels).sum()), batch.point_labels.size


def skeypoint_statistics(out: ModelOutput, xyz: np.ndarray) -> dict:
    """Per-cloud keypoint spread/closeness/containment statistics.

    spread_sq: mean over keypoints of the squared distance to the nearest
    other keypoint. closeness: mean Euclidean distance from each keypoint to
    its nearest input point. in_bbox: whether every normalized keypoint lies
    inside the cloud's axis-aligned bounding box (1e-9 slack).
    """
    spread, closeness, in_bbox = [], [], []
    for bi, s in enumerate(out.skeypoints):
        sk = s.skeypoints
        d2 = ((sk[:, None, :] - sk[None, :, :]) ** 2).sum(axis=-1)
        np.fill_diagonal(d2, np.inf)
        spread.append(float(d2.min(axis=1).mean()))
        dp = ((sk[:, None, :] - xyz[bi][None, :, :]) ** 2).sum(axis=-1)
        closeness.append(float(np.sqrt(dp.min(axis=1)).mean()))
        lo, hi = xyz[bi].min(axis=0) - 1e-9, xyz[bi].max(axis=0) + 1e-9
        in_bbox.append(bool(((s.normalized >= lo) & (s.normalized <= hi)).all()))
    return {"spread_sq": spread, "closeness": closeness, "in_bbox": in_bbox}


def _miou(confusion: np.ndarray) -> float:
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - inter
    present = union > 0
    return float((inter[present] / union[present]).mean()) if present.any() else 0.0


def evaluate(model: SKNet, dataset: Sequence[PointCloud], batch_size: int = 16,
             dropout_ratio: float = 0.0, skeypoint_noise_sigma: float = 0.0,
             seed: int = 0, collect_stats: bool = False) -> dict:
    """Eval-mode metrics, optionally under input dropout or keypoint noise.

    Input dropout removes ``round(ratio * n_points)`` points per cloud by
    uniform subsampling; keypoint noise adds N(0, sigma) to the inferred
    keypoints before pattern/detail extraction. Deterministic given ``seed``.
    """
    if not 0.0 <= dropout_ratio < 1.0:
        raise ValueError(f"dropout_ratio must be in [0, 1), got {dropout_ratio}")
    cfg = model.config
    n_points = cfg.n_points - int(round(dropout_ratio * cfg.n_points))
    rng = np.random.default_rng(seed)
    noise_rng = np.random.default_rng(seed + 1)
    correct = total = 0
    confusion = np.zeros((cfg.n_classes, cfg.n_classes), dtype=np.int64)
    stats: dict = {"spread_sq": [], "closeness": [], "in_bbox": []}
    for batch in batch_iterator(dataset, batch_size, n_points, shuffle=False, rng=rng,
                                with_normals=cfg.with_normals):
        out = model.forward(batch.coords, training=False, rng=noise_rng,
                            skeypoint_noise_sigma=skeypoint_noise_sigma)
        c, t = _batch_correct(out, batch, cfg.task)
        correct += c
        total += t
        if cfg.task == "segmentation":
            pred = out.logits.data.argmax(axis=2).reshape(-1)
            truth = batch.point_labels.reshape(-1)
            np.add.at(confusion, (truth, pred), 1)
        if collect_stats:
            s = skeypoint_statistics(out, batch.coords[:, :, :3])
            for k in stats:
                stats[k].extend(s[k])
    metrics = {"n_points": n_points, "dropout_ratio": dropout_ratio,
               "skeypoint_noise_sigma": skeypoint_noise_sigma}
    if cfg.task == "classification":
        metrics["metric"] = "accuracy"
        metrics["value"] = correct / total
    else:
        metrics["metric"] = "point_accuracy"
        metrics["value"] = correct / total
        metrics["miou"] = _miou(confusion)
    if collect_stats:
        metrics.update(stats)
    return metrics


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _snapshot(model: SKNet) -> dict:
    return {"params": {n: p.data.copy() for n, p in model.named_parameters()},
            "bn": {n: (st.running_mean.copy(), st.running_var.copy())
                   for n, st in model.named_bn_states() if st.initialized}}


def _restore(model: SKNet, snap: dict) -> None:
    for n, p in model.named_parameters():
        p.data = snap["params"][n].copy()
    for n, st in model.named_bn_states():
        if n in snap["bn"]:
            st.running_mean, st.running_var = (a.copy() for a in snap["bn"][n])


def train(model: SKNet, train_set: Sequence[PointCloud], test_set: Sequence[PointCloud],
          cfg: TrainConfig, log=None) -> TrainReport:
    """Full training loop. The model ends up holding the best-epoch weights.

    Per epoch: shuffled mini-batches, forward, combined loss, backward, Adam
    with staircase LR decay, then a full eval on the held-out split. The best
    epoch by test metric is kept. Raises :class:`TrainingDiverged` on a
    non-finite loss.
    """
    if not train_set or not test_set:
        raise ValueError("train: both splits must be non-empty")
    mcfg = model.config
    seq = np.random.SeedSequence(cfg.seed)
    data_rng, model_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    params = model.parameters()
    state = init_optimizer(params, lr=cfg.lr)
    batches_per_epoch = (len(train_set) + cfg.batch_size - 1) // cfg.batch_size
    decay_steps = max(1, cfg.decay_epochs * batches_per_epoch)
    metric_name = "accuracy" if mcfg.task == "classification" else "point_accuracy"
    report = TrainReport(metric_name=metric_name)
    best = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        sums = np.zeros(4)
        correct = seen = 0
        for batch in batch_iterator(train_set, cfg.batch_size, mcfg.n_points,
                                    shuffle=True, rng=data_rng,
                                    with_normals=mcfg.with_normals):
            out = model.forward(batch.coords, training=True, rng=model_rng)
            l_task = task_loss_from_output(out, batch, mcfg.task)
            l_sep = separation_loss(out.skeypoint_tensor, cfg.loss.delta_sq)
            l_close = close_loss(out.skeypoint_tensor, out.captured_points,
                                 cfg.loss.theta_sq)
            loss = total_loss(l_task, l_sep, l_close, cfg.loss)
            components = (float(loss.data), float(l_task.data),
                          float(l_sep.data), float(l_close.data))
            if not np.isfinite(components).all():
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}: total={components[0]}, "
                    f"task={components[1]}, sep={components[2]}, close={components[3]}")
            model.zero_grad()
            loss.backward()
            state.lr = lr_schedule(cfg.lr, state.t, cfg.decay_rate, decay_steps)
            adam_step(params, [p.grad for p in params], state)
            sums += components
            c, t = _batch_correct(out, batch, mcfg.task)
            correct += c
            seen += t
        test = evaluate(model, test_set, batch_size=cfg.batch_size,
                        seed=cfg.seed, collect_stats=True)
        row = EpochStats(
            epoch=epoch,
            loss_total=sums[0] / batches_per_epoch,
            loss_task=sums[1] / batches_per_epoch,
            loss_sep=sums[2] / batches_per_epoch,
            loss_close=sums[3] / batches_per_epoch,
            train_accuracy=correct / seen,
            test_metric=test["value"],
            skeypoint_spread_sq=float(np.mean(test["spread_sq"])),
            skeypoint_closeness=float(np.mean(test["closeness"])),
            wall_time_s=time.perf_counter() - t0,
        )
        report.rows.append(row)
        if log is not None:
            log(row)
        if best is None or row.test_metric > best[0]:
            best = (row.test_metric, _snapshot(model))
    _restore(model, best[1])
    return report
