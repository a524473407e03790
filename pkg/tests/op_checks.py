"""Per-operation gradient-check builders shared by unit and acceptance tests.

Each builder draws a small random instance, keeping inputs clear of
non-smooth points (activation kinks, pooling ties), and returns a function
that rebuilds the scalar output plus the tensors whose gradients to verify.
"""

import numpy as np

from sknet import autodiff as ad
from sknet.autodiff import BatchNormState, Tensor

from gradcheck import check_gradients


def _t(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def _kink_free(rng, shape, margin=1e-2):
    """Values bounded away from zero so relu/prelu stay locally linear."""
    return rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _tie_free(rng, rows, cols, gap=0.05):
    """Rows of distinct values with pairwise gaps >= gap (safe to max-pool)."""
    base = np.arange(rows * cols, dtype=np.float64) * gap
    return rng.permuted(base).reshape(rows, cols) + rng.normal() * 0.001


def build_linear(rng):
    x = _t(rng.normal(size=(3, 4)))
    W = _t(rng.normal(size=(4, 5)))
    b = _t(rng.normal(size=5))
    return lambda: ad.sum_all(ad.mul(y := ad.linear(x, W, b), y)), [x, W, b]


def build_relu(rng):
    x = _t(_kink_free(rng, (4, 5)))
    return lambda: ad.sum_all(ad.relu(x)), [x]


def build_prelu(rng):
    x = _t(_kink_free(rng, (4, 5)))
    a = _t(rng.uniform(0.05, 0.8, size=5))
    return lambda: ad.sum_all(ad.prelu(x, a)), [x, a]


def build_batch_norm(rng):
    x = _t(rng.normal(size=(5, 3)))
    gamma = _t(rng.uniform(0.5, 1.5, size=3))
    beta = _t(rng.normal(size=3))
    weights = _t(rng.normal(size=(5, 3)), grad=False)

    def build():
        y = ad.batch_norm(x, gamma, beta, BatchNormState(3), True)
        return ad.sum_all(ad.mul(y, weights))

    return build, [x, gamma, beta]


def build_max_pool(rng):
    x = _t(_tie_free(rng, 4, 6))
    w = _t(rng.normal(size=(4,)).repeat(1), grad=False)

    def build():
        pooled, _ = ad.max_pool_axis(x, axis=1)
        return ad.sum_all(ad.mul(pooled, w))

    return build, [x]


def build_concat(rng):
    a = _t(rng.normal(size=(3, 2)))
    b = _t(rng.normal(size=(3, 4)))
    w = _t(rng.normal(size=(3, 6)), grad=False)
    return lambda: ad.sum_all(ad.mul(ad.concat([a, b], axis=1), w)), [a, b]


def build_softmax_cross_entropy(rng):
    logits = _t(rng.normal(size=(4, 6)))
    labels = rng.integers(0, 6, size=4)
    return lambda: ad.softmax_cross_entropy(logits, labels), [logits]


def build_add_scale_reshape(rng):
    a = _t(rng.normal(size=(2, 6)))
    b = _t(rng.normal(size=(2, 6)))
    w = _t(rng.normal(size=(3, 4)), grad=False)

    def build():
        y = ad.reshape(ad.add(ad.scale(a, -1.7), b), (3, 4))
        return ad.sum_all(ad.mul(y, w))

    return build, [a, b]


def build_mul(rng):
    a = _t(rng.normal(size=(3, 3)))
    b = _t(rng.normal(size=(3, 3)))
    return lambda: ad.sum_all(ad.mul(a, b)), [a, b]


def build_recenter_groups(rng):
    groups = rng.normal(size=(2, 3, 4, 3))
    q = _t(rng.normal(size=(2, 3, 3)))
    w = _t(rng.normal(size=(2, 3, 4, 3)), grad=False)
    return lambda: ad.sum_all(ad.mul(ad.recenter_groups(groups, q), w)), [q]


def build_repeat_axis(rng):
    x = _t(rng.normal(size=(2, 3)))
    w = _t(rng.normal(size=(2, 4, 3)), grad=False)
    return lambda: ad.sum_all(ad.mul(ad.repeat_axis(x, 1, 4), w)), [x]


def build_interpolate_weighted(rng):
    feats = _t(rng.normal(size=(2, 5, 3)))
    idx = rng.integers(0, 5, size=(2, 4, 3))
    weights = rng.random((2, 4, 3))
    w = _t(rng.normal(size=(2, 4, 3)), grad=False)
    return (lambda: ad.sum_all(ad.mul(ad.interpolate_weighted(feats, idx, weights), w)),
            [feats])


def build_dropout(rng):
    x = _t(rng.normal(size=(4, 4)))
    seed = int(rng.integers(0, 2 ** 31))
    return (lambda: ad.sum_all(ad.dropout(x, 0.3, np.random.default_rng(seed), True)),
            [x])


OP_BUILDERS = {
    "linear": build_linear,
    "relu": build_relu,
    "prelu": build_prelu,
    "batch_norm": build_batch_norm,
    "max_pool_axis": build_max_pool,
    "concat": build_concat,
    "softmax_cross_entropy": build_softmax_cross_entropy,
    "add_scale_reshape": build_add_scale_reshape,
    "mul": build_mul,
    "recenter_groups": build_recenter_groups,
    "repeat_axis": build_repeat_axis,
    "interpolate_weighted": build_interpolate_weighted,
    "dropout": build_dropout,
}


def run_op_check(name, seed, h=1e-5, tol=1e-4):
    """Gradient-check one op instance; returns the worst relative error."""
    build, tensors = OP_BUILDERS[name](np.random.default_rng(seed))
    return check_gradients(build, tensors, h=h, tol=tol)
