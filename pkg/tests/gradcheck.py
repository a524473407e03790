"""Finite-difference gradient oracle shared by the unit and acceptance tests.

The oracle is independent of the autodiff engine: it reruns a scalar-valued
forward function while perturbing raw input arrays in place, one element at a
time, and compares central differences against whatever ``.grad`` the engine
produced.
"""

import numpy as np


def numerical_gradient(f, arrays, h=1e-6):
    """Central-difference gradients of scalar ``f()`` w.r.t. each array.

    ``f`` must recompute the forward value from the current contents of
    ``arrays``; the entries are perturbed in place and restored.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-8):
    """Max absolute difference scaled by the largest magnitude involved."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    num = np.abs(a - b).max() if a.size else 0.0
    den = max(np.abs(a).max() if a.size else 0.0,
              np.abs(b).max() if b.size else 0.0, floor)
    return num / den


def check_gradients(build_scalar, tensors, h=1e-6, tol=1e-4):
    """Assert analytic grads of ``build_scalar()`` match finite differences.

    ``build_scalar`` constructs a fresh graph from ``tensors`` (which must
    have ``requires_grad=True``) and returns the scalar output tensor.
    Returns the worst relative error observed.
    """
    out = build_scalar()
    for t in tensors:
        t.grad = None
    out.backward()
    numeric = numerical_gradient(lambda: float(build_scalar().data),
                                 [t.data for t in tensors], h=h)
    worst = 0.0
    for t, n in zip(tensors, numeric):
        assert t.grad is not None, "analytic gradient missing"
        worst = max(worst, rel_error(t.grad, n))
    assert worst < tol, f"gradient mismatch: rel error {worst:.3e} >= {tol:.0e}"
    return worst
