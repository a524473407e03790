"""The keypoint network: point features, keypoint inference, pattern/detail
extraction, and task heads.

Forward dataflow (classification):

    coords (B, N, 3)
      -> shared per-point MLPs (PReLU + batch norm)        point features
      -> max over N                                        global feature (B, G)
      -> three FC layers (PReLU + batch norm), reshape     keypoints (B, M, 3)
      -> detail branch: kNN(H) over input points, recenter, shared MLPs,
         max over H                                        detail feature (B, M, 256)
      -> pattern branch: normalized keypoints (mean of captured points),
         kNN(K) among them, recenter, shared MLPs, max     pattern feature (B, M, 256)
      -> concat -> shared FC stack -> max over M           PD feature (B, F)
      -> concat with global feature -> head                logits (B, C)

Keypoint selection indices (kNN / ball query) are constants of the forward
pass; the only gradient path from the task loss back to keypoint inference is
the recentering subtraction in the detail branch (plus the regulating losses).
Segmentation replaces the head: per-keypoint features are interpolated onto
the input points through their 3 nearest normalized keypoints with inverse
squared-distance weights.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .geometry import (GroupedRegions, ball_query, farthest_point_sampling,
                       gather_group, knn_query, random_dropout_sample)

CHECKPOINT_VERSION = 1

PRELU_INIT_SLOPE = 0.25


class ConfigError(ValueError):
    """Invalid or inconsistent model configuration."""


@dataclass
class ModelConfig:
    """Hyperparameters and layer widths; the single source of truth for a run.

    ``skeypoint_fc_widths`` defaults to (256, 256, 3*M); its last entry must
    always equal 3*M so the output reshapes to (M, 3). ``head_widths`` lists
    the hidden head layers; the final projection to ``n_classes`` is appended
    automatically.
    """
    n_points: int = 1024
    n_skeypoints: int = 192                # M
    detail_k: int = 32                     # H, captured points per keypoint
    pattern_k: int = 16                    # K, neighbors among normalized keypoints
    point_mlp_widths: tuple = (64, 64, 64, 128, 512)
    skeypoint_fc_widths: Optional[tuple] = None
    detail_mlp_widths: tuple = (64, 128, 256)
    pattern_mlp_widths: tuple = (64, 128, 256)
    pd_fc_widths: tuple = (512, 512)
    head_widths: tuple = (256, 128)
    head_dropout: float = 0.5
    n_classes: int = 40
    with_normals: bool = False
    task: str = "classification"           # classification | segmentation
    recenter_local: bool = True
    detail_sampler: str = "knn"            # knn | ball
    ball_radius: float = 0.1
    pd_branches: str = "both"              # both | detail | pattern
    keypoint_source: str = "learned"       # learned | fps | random
    baseline_jitter_sigma: float = 0.01

    def __post_init__(self):
        for name in ("point_mlp_widths", "skeypoint_fc_widths", "detail_mlp_widths",
                     "pattern_mlp_widths", "pd_fc_widths", "head_widths"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, tuple(int(w) for w in v))
        if self.skeypoint_fc_widths is None:
            self.skeypoint_fc_widths = (256, 256, 3 * self.n_skeypoints)
        if self.n_skeypoints < self.pattern_k:
            raise ConfigError(f"n_skeypoints={self.n_skeypoints} must be >= pattern_k={self.pattern_k}")
        if self.detail_k < 1:
            raise ConfigError("detail_k must be >= 1")
        for name in ("point_mlp_widths", "skeypoint_fc_widths", "detail_mlp_widths",
                     "pattern_mlp_widths", "pd_fc_widths", "head_widths"):
            if any(w < 1 for w in getattr(self, name)):
                raise ConfigError(f"{name} must be all >= 1")
        if self.skeypoint_fc_widths[-1] != 3 * self.n_skeypoints:
            raise ConfigError(
                f"last skeypoint FC width {self.skeypoint_fc_widths[-1]} != 3*M={3 * self.n_skeypoints}")
        if self.task not in ("classification", "segmentation"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.detail_sampler not in ("knn", "ball"):
            raise ConfigError(f"unknown detail_sampler {self.detail_sampler!r}")
        if self.pd_branches not in ("both", "detail", "pattern"):
            raise ConfigError(f"unknown pd_branches {self.pd_branches!r}")
        if self.keypoint_source not in ("learned", "fps", "random"):
            raise ConfigError(f"unknown keypoint_source {self.keypoint_source!r}")
        if self.task == "segmentation" and self.n_skeypoints < 3:
            raise ConfigError("segmentation interpolation needs at least 3 keypoints")

    @property
    def in_channels(self) -> int:
        return 6 if self.with_normals else 3

    @property
    def global_width(self) -> int:
        return self.point_mlp_widths[-1]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass
class SkeypointSet:
    """Per-cloud keypoints, their normalized counterparts, and both groupings."""
    skeypoints: np.ndarray          # (M, 3)
    normalized: np.ndarray          # (M, 3), mean of each captured region
    detail_regions: GroupedRegions  # M x H indices into the input cloud
    pattern_regions: GroupedRegions  # M x K indices into the normalized set


@dataclass
class ModelOutput:
    logits: Tensor                  # (B, C) or (B, N, C)
    skeypoints: list                # SkeypointSet per batch item
    global_feature: Tensor          # (B, G)
    pd_feature: Tensor              # (B, F)
    skeypoint_tensor: Tensor        # (B, M, 3), for the regulating losses
    captured_points: np.ndarray     # (B, M, H, 3) raw coordinates


class DenseLayer:
    """Linear + batch norm + activation over the trailing dimension."""

    def __init__(self, fan_in: int, width: int, activation: Optional[str],
                 rng: np.random.Generator, with_bn: bool = True):
        std = np.sqrt(2.0 / fan_in)
        self.W = Tensor(rng.normal(0.0, std, (fan_in, width)), requires_grad=True)
        self.b = Tensor(np.zeros(width), requires_grad=True)
        self.activation = activation
        self.bn = BatchNormState(width) if with_bn else None
        if with_bn:
            self.gamma = Tensor(np.ones(width), requires_grad=True)
            self.beta = Tensor(np.zeros(width), requires_grad=True)
        if activation == "prelu":
            self.slope = Tensor(np.full(width, PRELU_INIT_SLOPE), requires_grad=True)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = ad.linear(x, self.W, self.b)
        if self.bn is not None:
            y = ad.batch_norm(y, self.gamma, self.beta, self.bn, training)
        if self.activation == "prelu":
            y = ad.prelu(y, self.slope)
        elif self.activation == "relu":
            y = ad.relu(y)
        return y

    def named_params(self, prefix: str):
        yield prefix + ".W", self.W
        yield prefix + ".b", self.b
        if self.bn is not None:
            yield prefix + ".gamma", self.gamma
            yield prefix + ".beta", self.beta
        if self.activation == "prelu":
            yield prefix + ".slope", self.slope


def interpolation_weights(normalized: np.ndarray, xyz: np.ndarray) -> tuple:
    """3-NN inverse squared-distance weights of each point over the
    normalized keypoints; rows sum to 1.

    normalized: (B, M, 3); xyz: (B, N, 3). Returns (indices (B, N, 3),
    weights (B, N, 3)).
    """
    b, n, _ = xyz.shape
    idx = np.empty((b, n, 3), dtype=np.int64)
    w = np.empty((b, n, 3))
    for bi in range(b):
        regions = knn_query(normalized[bi], xyz[bi], 3)
        idx[bi] = regions.members
        d2 = ((xyz[bi][:, None, :] - normalized[bi][idx[bi]]) ** 2).sum(axis=-1)
        inv = 1.0 / (d2 + 1e-8)
        w[bi] = inv / inv.sum(axis=1, keepdims=True)
    return idx, w


def _stack(fan_in: int, widths, activation: str, rng) -> list:
    layers = []
    for w in widths:
        layers.append(DenseLayer(fan_in, w, activation, rng))
        fan_in = w
    return layers


def _run_stack(layers, x: Tensor, training: bool) -> Tensor:
    for layer in layers:
        x = layer(x, training)
    return x


class SKNet:
    """End-to-end model over batched point clouds.

    A model instance is exclusive during a training step (batch-norm state
    mutation); eval-mode forwards on a trained instance are read-only.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.point_mlp = _stack(c.in_channels, c.point_mlp_widths, "prelu", rng)
        # index of the per-point activation exposed to the segmentation head:
        # the last 64-wide layer, per the backbone convention
        widths = c.point_mlp_widths
        self.seg_feat_index = max((i for i, w in enumerate(widths) if w == 64), default=0)
        self.skeypoint_fc = (_stack(c.global_width, c.skeypoint_fc_widths, "prelu", rng)
                             if c.keypoint_source == "learned" else [])
        self.detail_mlp = (_stack(3, c.detail_mlp_widths, "relu", rng)
                           if c.pd_branches in ("both", "detail") else [])
        self.pattern_mlp = (_stack(3, c.pattern_mlp_widths, "relu", rng)
                            if c.pd_branches in ("both", "pattern") else [])
        fused_width = ((c.detail_mlp_widths[-1] if self.detail_mlp else 0)
                       + (c.pattern_mlp_widths[-1] if self.pattern_mlp else 0))
        self.pd_fc = _stack(fused_width, c.pd_fc_widths, "relu", rng)
        head_in = c.global_width + c.pd_fc_widths[-1]
        if c.task == "classification":
            self.head = _stack(head_in, c.head_widths, "relu", rng)
            self.head_out = DenseLayer(c.head_widths[-1] if c.head_widths else head_in,
                                       c.n_classes, None, rng, with_bn=False)
        else:
            seg_in = widths[self.seg_feat_index] + c.pd_fc_widths[-1] + head_in
            self.head = _stack(seg_in, c.head_widths, "relu", rng)
            self.head_out = DenseLayer(c.head_widths[-1] if c.head_widths else seg_in,
                                       c.n_classes, None, rng, with_bn=False)

    # -- parameter and state registries -------------------------------------

    def _named_stacks(self):
        yield "point_mlp", self.point_mlp
        yield "skeypoint_fc", self.skeypoint_fc
        yield "detail_mlp", self.detail_mlp
        yield "pattern_mlp", self.pattern_mlp
        yield "pd_fc", self.pd_fc
        yield "head", self.head
        yield "head_out", [self.head_out]

    def named_parameters(self) -> list:
        out = []
        for stack_name, layers in self._named_stacks():
            for i, layer in enumerate(layers):
                out.extend(layer.named_params(f"{stack_name}.{i}"))
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_bn_states(self) -> list:
        out = []
        for stack_name, layers in self._named_stacks():
            for i, layer in enumerate(layers):
                if layer.bn is not None:
                    out.append((f"{stack_name}.{i}", layer.bn))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- forward pieces ------------------------------------------------------

    def point_feature_extract(self, coords: np.ndarray, training: bool) -> tuple:
        """Shared per-point MLPs + max pool: (seg point features, global feature)."""
        if coords.shape[-1] != self.config.in_channels:
            raise ad.DimensionError(
                f"expected {self.config.in_channels} input channels, got {coords.shape[-1]}")
        x = Tensor(coords)
        seg_feats = None
        for i, layer in enumerate(self.point_mlp):
            x = layer(x, training)
            if i == self.seg_feat_index:
                seg_feats = x
        global_feat, _ = ad.max_pool_axis(x, axis=1)
        return seg_feats, global_feat

    def infer_skeypoints(self, global_feat: Tensor, training: bool) -> Tensor:
        """Regress (B, M, 3) keypoints from the global feature."""
        b = global_feat.data.shape[0]
        x = _run_stack(self.skeypoint_fc, global_feat, training)
        return ad.reshape(x, (b, self.config.n_skeypoints, 3))

    def _baseline_skeypoints(self, xyz: np.ndarray, rng: Optional[np.random.Generator]) -> Tensor:
        c = self.config
        out = np.empty((xyz.shape[0], c.n_skeypoints, 3))
        for bi in range(xyz.shape[0]):
            if c.keypoint_source == "fps":
                idx = farthest_point_sampling(xyz[bi], c.n_skeypoints, seed_index=0)
            else:
                if rng is None:
                    raise ValueError("random keypoint baseline requires an rng")
                idx = random_dropout_sample(xyz[bi], c.n_skeypoints, rng)
            out[bi] = xyz[bi][idx]
        if c.baseline_jitter_sigma > 0:
            if rng is None:
                raise ValueError("keypoint baseline jitter requires an rng")
            out = out + c.baseline_jitter_sigma * rng.standard_normal(out.shape)
        return Tensor(out)

    def pde_forward(self, xyz: np.ndarray, skeypoints: Tensor, training: bool) -> tuple:
        """Pattern-and-detail extraction.

        Returns (pd_feature (B, F), per-keypoint features (B, M, F),
        skeypoint sets, captured points (B, M, H, 3)).
        """
        c = self.config
        b, n, _ = xyz.shape
        m, h, k = c.n_skeypoints, c.detail_k, c.pattern_k
        if h > n:
            raise ConfigError(f"detail_k={h} exceeds point count {n}")
        if k > m:
            raise ConfigError(f"pattern_k={k} exceeds keypoint count {m}")
        sk = skeypoints.data
        captured = np.empty((b, m, h, 3))
        normalized = np.empty((b, m, 3))
        sets = []
        for bi in range(b):
            if c.detail_sampler == "ball":
                regions = ball_query(xyz[bi], sk[bi], c.ball_radius, h)
            else:
                regions = knn_query(xyz[bi], sk[bi], h)
            captured[bi] = gather_group(xyz[bi], regions)
            normalized[bi] = captured[bi].mean(axis=1)
            pattern_regions = knn_query(normalized[bi], normalized[bi], k)
            sets.append(SkeypointSet(sk[bi].copy(), normalized[bi].copy(),
                                     regions, pattern_regions))
        branch_feats = []
        if self.detail_mlp:
            if c.recenter_local:
                detail_in = ad.recenter_groups(captured, skeypoints)
            else:
                detail_in = Tensor(captured)
            y = _run_stack(self.detail_mlp, detail_in, training)
            detail_feat, _ = ad.max_pool_axis(y, axis=2)       # (B, M, Cd)
            branch_feats.append(detail_feat)
        if self.pattern_mlp:
            groups = np.stack([normalized[bi][s.pattern_regions.members]
                               for bi, s in enumerate(sets)])  # (B, M, K, 3)
            if c.recenter_local:
                groups = groups - normalized[:, :, None, :]
            y = _run_stack(self.pattern_mlp, Tensor(groups), training)
            pattern_feat, _ = ad.max_pool_axis(y, axis=2)      # (B, M, Cp)
            branch_feats.append(pattern_feat)
        fused = branch_feats[0] if len(branch_feats) == 1 else ad.concat(branch_feats, axis=2)
        per_sk = _run_stack(self.pd_fc, fused, training)       # (B, M, F)
        pd_feature, _ = ad.max_pool_axis(per_sk, axis=1)       # (B, F)
        return pd_feature, per_sk, sets, captured

    def classify_head(self, global_feat: Tensor, pd_feature: Tensor, training: bool,
                      rng: Optional[np.random.Generator]) -> Tensor:
        x = ad.concat([global_feat, pd_feature], axis=1)
        x = _run_stack(self.head, x, training)
        if training and self.config.head_dropout > 0:
            if rng is None:
                raise ValueError("training-mode head dropout requires an rng")
            x = ad.dropout(x, self.config.head_dropout, rng, training)
        return self.head_out(x, training)

    def segment_head(self, seg_feats: Tensor, per_sk: Tensor, normalized: np.ndarray,
                     xyz: np.ndarray, global_feat: Tensor, pd_feature: Tensor,
                     training: bool) -> Tensor:
        """Per-point logits via 3-NN inverse squared-distance interpolation."""
        if self.config.n_skeypoints < 3:
            raise ConfigError("segmentation interpolation needs at least 3 keypoints")
        idx, w = interpolation_weights(normalized, xyz)
        interp = ad.interpolate_weighted(per_sk, idx, w)       # (B, N, F)
        b, n, _ = xyz.shape
        parts = [seg_feats, interp,
                 ad.repeat_axis(global_feat, 1, n),
                 ad.repeat_axis(pd_feature, 1, n)]
        x = ad.concat(parts, axis=2)
        x = _run_stack(self.head, x, training)
        return self.head_out(x, training)

    # -- full forward --------------------------------------------------------

    def forward(self, coords: np.ndarray, training: bool = False,
                rng: Optional[np.random.Generator] = None,
                skeypoint_noise_sigma: float = 0.0) -> ModelOutput:
        """Run the whole network on a (B, N, 3|6) coordinate batch.

        ``rng`` is required in training mode (head dropout) and for the
        random-keypoint baseline or keypoint noise. ``skeypoint_noise_sigma``
        perturbs the inferred keypoints right before pattern/detail
        extraction, the robustness-probe protocol.
        """
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim != 3:
            raise ad.DimensionError(f"expected (B, N, C) coords, got {coords.shape}")
        xyz = np.ascontiguousarray(coords[:, :, :3])
        seg_feats, global_feat = self.point_feature_extract(coords, training)
        if self.config.keypoint_source == "learned":
            skeypoints = self.infer_skeypoints(global_feat, training)
        else:
            skeypoints = self._baseline_skeypoints(xyz, rng)
        if skeypoint_noise_sigma > 0:
            if rng is None:
                raise ValueError("skeypoint noise requires an rng")
            noise = skeypoint_noise_sigma * rng.standard_normal(skeypoints.data.shape)
            skeypoints = ad.add(skeypoints, Tensor(noise))
        pd_feature, per_sk, sets, captured = self.pde_forward(xyz, skeypoints, training)
        if self.config.task == "classification":
            logits = self.classify_head(global_feat, pd_feature, training, rng)
        else:
            normalized = np.stack([s.normalized for s in sets])
            logits = self.segment_head(seg_feats, per_sk, normalized, xyz,
                                       global_feat, pd_feature, training)
        return ModelOutput(logits=logits, skeypoints=sets, global_feature=global_feat,
                           pd_feature=pd_feature, skeypoint_tensor=skeypoints,
                           captured_points=captured)

    __call__ = forward


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(model: SKNet, path: str) -> None:
    """Write config, parameters, and batch-norm running stats to an npz file."""
    arrays = {}
    for name, p in model.named_parameters():
        arrays["param/" + name] = p.data
    for name, st in model.named_bn_states():
        if st.initialized:
            arrays["bn/" + name + "/mean"] = st.running_mean
            arrays["bn/" + name + "/var"] = st.running_var
    meta = {"version": CHECKPOINT_VERSION, "config": json.loads(model.config.to_json()),
            "config_hash": model.config.hash()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_checkpoint(path: str) -> SKNet:
    """Rebuild a model from a checkpoint; validates the stored config hash."""
    with np.load(path) as zf:
        meta = json.loads(bytes(zf["__meta__"].tobytes()).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        config = ModelConfig(**meta["config"])
        if config.hash() != meta["config_hash"]:
            raise ValueError("checkpoint config hash mismatch")
        model = SKNet(config, seed=0)
        for name, p in model.named_parameters():
            key = "param/" + name
            if key not in zf:
                raise ValueError(f"checkpoint missing parameter {name}")
            stored = zf[key]
            if stored.shape != p.data.shape:
                raise ValueError(f"checkpoint parameter {name} has shape {stored.shape}, "
                                 f"expected {p.data.shape}")
            p.data = stored.astype(np.float64)
        for name, st in model.named_bn_states():
            mkey, vkey = "bn/" + name + "/mean", "bn/" + name + "/var"
            if mkey in zf:
                st.running_mean = zf[mkey].astype(np.float64)
                st.running_var = zf[vkey].astype(np.float64)
    return model
