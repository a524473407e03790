"""Walk through the autodiff engine: build a small MLP, backpropagate, and
cross-check one gradient against central finite differences.

Run:  python demos/01_autodiff_engine.py
"""

import numpy as np

from sknet import autodiff as ad
from sknet.autodiff import BatchNormState, Tensor

rng = np.random.default_rng(0)

# a 2-layer perceptron on a batch of 6 points, trained nowhere -- we only
# want the gradients
x = Tensor(rng.normal(size=(6, 3)))
W1 = Tensor(rng.normal(size=(3, 8)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(8), requires_grad=True)
slope = Tensor(np.full(8, 0.25), requires_grad=True)
gamma = Tensor(np.ones(8), requires_grad=True)
beta = Tensor(np.zeros(8), requires_grad=True)
W2 = Tensor(rng.normal(size=(8, 4)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(4), requires_grad=True)
labels = np.array([0, 1, 2, 3, 0, 1])


def forward():
    h = ad.linear(x, W1, b1)
    h = ad.batch_norm(h, gamma, beta, BatchNormState(8), training=True)
    h = ad.prelu(h, slope)
    return ad.softmax_cross_entropy(ad.linear(h, W2, b2), labels)


loss = forward()
print(f"loss on random weights: {float(loss.data):.4f} (ln 4 = {np.log(4):.4f})")

loss.backward()
print("gradient shapes:", {n: t.grad.shape for n, t in
                           [("W1", W1), ("gamma", gamma), ("W2", W2)]})

# spot-check dL/dW1[0,0] with central differences
h = 1e-6
orig = W1.data[0, 0]
W1.data[0, 0] = orig + h
fp = float(forward().data)
W1.data[0, 0] = orig - h
fm = float(forward().data)
W1.data[0, 0] = orig
numeric = (fp - fm) / (2 * h)
print(f"dL/dW1[0,0]: analytic {W1.grad[0, 0]:+.8f}  numeric {numeric:+.8f}")

# gradients accumulate across backward calls until cleared
before = W2.grad.copy()
forward().backward()
print("second backward doubles the leaf gradient:",
      np.allclose(W2.grad, 2 * before))

# max pooling is exactly permutation-free: same set, same float result
feats = Tensor(rng.normal(size=(1, 100, 16)))
pooled, _ = ad.max_pool_axis(feats, axis=1)
perm = rng.permutation(100)
pooled_perm, _ = ad.max_pool_axis(Tensor(feats.data[:, perm]), axis=1)
print("max-pool invariant under point permutation:",
      np.array_equal(pooled.data, pooled_perm.data))
