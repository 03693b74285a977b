"""Finite-difference utilities shared by the gradient tests."""

import numpy as np

FD_STEP = 1e-4


def numerical_gradient(f, x, h=FD_STEP, coords=None):
    """Central differences of scalar f at array x (optionally only at ``coords``)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
