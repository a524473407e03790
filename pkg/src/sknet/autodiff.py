"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything is float64 and row-major. The operation set is exactly what the
point-cloud network needs: trailing-dim linear layers, PReLU/ReLU, batch
normalization, axis max-pooling, concatenation, softmax cross-entropy, and a
few purpose-built ops (group recentering, axis broadcast, weighted feature
interpolation, dropout). There is no general broadcasting beyond the bias add
of ``linear`` and per-channel scales.

Graphs are built implicitly: every op output keeps a node with references to
its parents and a closure computing parent gradients. ``backward`` then walks
the recorded operations once, in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class UninitializedStatsError(RuntimeError):
    """Raised when batch norm runs in eval mode before any training step."""


class _Node:
    """One executed operation: parent tensors plus the saved backward closure."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: str, parents: Sequence["Tensor"],
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.op = op
        self.parents = tuple(parents)
        self.backward_fn = backward_fn


class Tensor:
    """N-dimensional float64 array with an optional gradient slot.

    ``grad`` is ``None`` until a backward pass reaches the tensor. Repeated
    backward passes accumulate into ``grad``; call :meth:`zero_grad` (or set
    ``grad = None``) between optimizer steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def wrap_op(data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], tuple], op: str = "") -> Tensor:
    """Build an op output tensor, attaching a graph node if any parent needs grad.

    ``backward_fn`` receives the output gradient and must return one gradient
    array (or None) per parent, in order. This is also the extension point for
    ops defined outside this module (e.g. the regulating losses).
    """
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out.node = _Node(op, parents, backward_fn)
    return out


def _topo_order(root: Tensor) -> list:
    """Tape of op outputs reachable from root, parents before children."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        t, emitted = stack.pop()
        if emitted:
            order.append(t)
            continue
        if t.node is None or id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor.

    ``root`` must hold a single element. Each recorded operation is visited
    exactly once. Gradients add into existing ``grad`` buffers, so repeated
    calls without zeroing accumulate.
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    tape = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    holders = {id(root): root}
    for t in reversed(tape):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        for p, pg in zip(t.node.parents, t.node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
                holders[key] = p
    for key, g in grads.items():  # remaining entries are leaves
        t = holders[key]
        t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = x @ W + b over the trailing dimension of x.

    x: (..., Cin), W: (Cin, Cout), b: (Cout,). Leading dimensions pass through.
    """
    cin = x.data.shape[-1] if x.data.ndim else None
    if W.data.ndim != 2 or cin != W.data.shape[0]:
        raise DimensionError(
            f"linear: x shape {x.data.shape} incompatible with W shape {W.data.shape}")
    if b.data.shape != (W.data.shape[1],):
        raise DimensionError(
            f"linear: b shape {b.data.shape} incompatible with W shape {W.data.shape}")
    y = x.data @ W.data
    y += b.data

    def bwd(g: np.ndarray) -> tuple:
        g2 = g.reshape(-1, W.data.shape[1])
        gx = g @ W.data.T if x.requires_grad else None
        gW = x.data.reshape(-1, W.data.shape[0]).T @ g2 if W.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gW, gb

    return wrap_op(y, (x, W, b), bwd, "linear")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x). Subgradient at 0 is 0."""
    y = np.maximum(0.0, x.data)

    def bwd(g: np.ndarray) -> tuple:
        return (g * (x.data > 0),)

    return wrap_op(y, (x,), bwd, "relu")


def prelu(x: Tensor, a: Tensor) -> Tensor:
    """max(0, x) + a * min(0, x) with one slope per trailing channel.

    Gradient to ``a`` sums over the negative positions; the kink at 0
    contributes nothing to either input.
    """
    if x.data.ndim < 1 or a.data.shape != (x.data.shape[-1],):
        raise DimensionError(
            f"prelu: slope shape {a.data.shape} does not match channels of {x.data.shape}")
    pos = x.data > 0
    neg = x.data < 0
    y = np.where(pos, x.data, a.data * x.data)

    def bwd(g: np.ndarray) -> tuple:
        gx = g * (pos + a.data * neg) if x.requires_grad else None
        ga = None
        if a.requires_grad:
            ga = (g * x.data * neg).reshape(-1, a.data.shape[0]).sum(axis=0)
        return gx, ga

    return wrap_op(y, (x, a), bwd, "prelu")


class BatchNormState:
    """Running statistics for one batch-norm layer (EMA over training batches)."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.running_mean: Optional[np.ndarray] = None
        self.running_var: Optional[np.ndarray] = None

    @property
    def initialized(self) -> bool:
        return self.running_mean is not None


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool) -> Tensor:
    """Normalize over all non-channel axes; channels are the trailing axis.

    Training mode uses batch statistics (biased variance) and updates the
    running stats in ``state``. Eval mode uses the running stats and fails if
    no training step has populated them yet.
    """
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"batch_norm: gamma/beta shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match channels of {x.data.shape}")
    axes = tuple(range(x.data.ndim - 1))
    if training:
        mean = x.data.mean(axis=axes)
        xhat = x.data - mean
        var = np.mean(xhat * xhat, axis=axes)
        if state.running_mean is None:
            state.running_mean = mean.copy()
            state.running_var = var.copy()
        else:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1.0 - m) * mean
            state.running_var = m * state.running_var + (1.0 - m) * var
    else:
        if not state.initialized:
            raise UninitializedStatsError(
                "batch_norm: eval mode before any training step populated running stats")
        var = state.running_var
        xhat = x.data - state.running_mean
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat *= inv_std
    y = gamma.data * xhat
    y += beta.data
    n = x.data.size // c

    def bwd(g: np.ndarray) -> tuple:
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gx = None
        if x.requires_grad:
            if training:
                # batch statistics couple every element of a channel; the
                # reduction terms reuse gbeta/ggamma scaled by gamma
                gx = g * gamma.data
                gx -= xhat * (ggamma * gamma.data / n)
                gx -= gbeta * gamma.data / n
                gx *= inv_std
            else:
                gx = g * (gamma.data * inv_std)
        return (gx,
                ggamma if gamma.requires_grad else None,
                gbeta if beta.requires_grad else None)

    return wrap_op(y, (x, gamma, beta), bwd, "batch_norm")


def max_pool_axis(x: Tensor, axis: int) -> tuple:
    """Max over one axis. Returns (pooled tensor, argmax index array).

    Backward routes gradient only to the argmax positions; ties resolve to the
    lowest index.
    """
    ndim = x.data.ndim
    if not -ndim <= axis < ndim:
        raise DimensionError(f"max_pool_axis: axis {axis} invalid for shape {x.data.shape}")
    axis = axis % ndim
    if x.data.shape[axis] == 0:
        raise ValueError(f"max_pool_axis: empty axis {axis} in shape {x.data.shape}")
    idx = np.argmax(x.data, axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def bwd(g: np.ndarray) -> tuple:
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return wrap_op(y, (x,), bwd, "max_pool_axis"), idx


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along one axis; backward splits the gradient back."""
    if not xs:
        raise ValueError("concat: empty input list")
    ref = list(xs[0].data.shape)
    for t in xs[1:]:
        s = list(t.data.shape)
        s[axis], ref[axis] = 0, 0
        if s != ref:
            raise DimensionError(
                f"concat: shapes {[tuple(u.data.shape) for u in xs]} incompatible on axis {axis}")
        ref = list(xs[0].data.shape)
    y = np.concatenate([t.data for t in xs], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in xs])[:-1]

    def bwd(g: np.ndarray) -> tuple:
        return tuple(np.split(g, splits, axis=axis))

    return wrap_op(y, tuple(xs), bwd, "concat")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized.

    logits: (B, C); labels: int array (B,) with values in [0, C).
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: expected (B, C) logits, got {logits.data.shape}")
    labels = np.asarray(labels)
    b, c = logits.data.shape
    if labels.shape != (b,):
        raise DimensionError(f"softmax_cross_entropy: labels shape {labels.shape} != ({b},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logprobs = z - logsumexp
    loss = -logprobs[np.arange(b), labels].mean()

    def bwd(g: np.ndarray) -> tuple:
        probs = np.exp(logprobs)
        probs[np.arange(b), labels] -= 1.0
        return (g * probs / b,)

    return wrap_op(np.float64(loss), (logits,), bwd, "softmax_cross_entropy")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    return wrap_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    return wrap_op(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data), "mul")


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements into a scalar tensor."""
    def bwd(g: np.ndarray) -> tuple:
        return (np.full_like(x.data, float(g)),)

    return wrap_op(np.float64(x.data.sum()), (x,), bwd, "sum_all")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    return wrap_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    y = x.data.reshape(shape)

    def bwd(g: np.ndarray) -> tuple:
        return (g.reshape(x.data.shape),)

    return wrap_op(y, (x,), bwd, "reshape")


def recenter_groups(groups: np.ndarray, queries: Tensor) -> Tensor:
    """Subtract each query point from its gathered group: groups - q[..., None, :].

    ``groups`` is a constant (..., S, D) coordinate array; ``queries`` is a
    differentiable (..., D) tensor. This is the only gradient path from grouped
    local tensors back to the query points, since index selection is constant.
    """
    groups = np.asarray(groups, dtype=np.float64)
    if groups.shape[:-2] != queries.data.shape[:-1] or groups.shape[-1] != queries.data.shape[-1]:
        raise DimensionError(
            f"recenter_groups: groups {groups.shape} incompatible with queries {queries.data.shape}")
    y = groups - queries.data[..., None, :]

    def bwd(g: np.ndarray) -> tuple:
        return (-g.sum(axis=-2),)

    return wrap_op(y, (queries,), bwd, "recenter_groups")


def repeat_axis(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of size n by repetition; backward sums over it."""
    y = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)

    def bwd(g: np.ndarray) -> tuple:
        return (g.sum(axis=axis),)

    return wrap_op(y, (x,), bwd, "repeat_axis")


def interpolate_weighted(feats: Tensor, idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted gather-sum: out[b, n] = sum_k weights[b, n, k] * feats[b, idx[b, n, k]].

    feats: (B, M, F) tensor; idx: constant int (B, N, k); weights: constant
    (B, N, k). Used to spread per-keypoint features onto the input points.
    """
    idx = np.asarray(idx)
    weights = np.asarray(weights, dtype=np.float64)
    b, m, f = feats.data.shape
    if idx.shape != weights.shape or idx.shape[0] != b:
        raise DimensionError(
            f"interpolate_weighted: idx {idx.shape} / weights {weights.shape} "
            f"incompatible with feats {feats.data.shape}")
    batch_ix = np.arange(b)[:, None, None]
    gathered = feats.data[batch_ix, idx]            # (B, N, k, F)
    y = (gathered * weights[..., None]).sum(axis=2)  # (B, N, F)

    def bwd(g: np.ndarray) -> tuple:
        gf = np.zeros_like(feats.data)
        contrib = weights[..., None] * g[:, :, None, :]  # (B, N, k, F)
        for bi in range(b):
            np.add.at(gf[bi], idx[bi].ravel(), contrib[bi].reshape(-1, f))
        return (gf,)

    return wrap_op(y, (feats,), bwd, "interpolate_weighted")


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) >= rate) / keep

    def bwd(g: np.ndarray) -> tuple:
        return (g * mask,)

    return wrap_op(x.data * mask, (x,), bwd, "dropout")
