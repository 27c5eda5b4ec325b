"""Central finite-difference gradient verification."""

from __future__ import annotations

import numpy as np


def numerical_gradient(fn, tensor, h=1e-3):
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``tensor``.

    ``fn`` must re-run the forward pass reading ``tensor.data``; the data is
    perturbed in place one element at a time and restored afterwards.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn())
        flat[i] = orig - h
        fm = float(fn())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric):
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(fn, tensors, h=1e-3, tol=1e-3):
    """True when analytic gradients of scalar ``fn()`` match finite differences.

    ``fn`` runs a fresh forward pass and returns the loss tensor; gradients
    are compared for every tensor in ``tensors``.
    """
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    for t, a in zip(tensors, analytic):
        n = numerical_gradient(lambda: fn().data, t, h=h)
        if max_rel_error(a, n) >= tol:
            return False
    return True
