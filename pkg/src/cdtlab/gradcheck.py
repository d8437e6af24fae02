"""Central finite-difference gradient checking.

The harness runs the graph in float64 (`using_dtype`) so the only error
left is the O(h^2) truncation of the central difference.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


def numeric_grad(loss_fn, tensors, h=1e-5, sample=None, rng=None):
    """Central finite differences of `loss_fn()` w.r.t. the given tensors.

    `loss_fn` must rebuild the graph from the tensors' current `.data` each
    call.  Returns a list of arrays shaped like each tensor.  With `sample`,
    only that many randomly chosen coordinates per tensor are perturbed
    (the rest are left as NaN and skipped by `max_relative_error`).
    """
    grads = []
    for t in tensors:
        g = np.full(t.data.shape, np.nan)
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if sample is not None and flat.size > sample:
            idxs = (rng or np.random.default_rng(0)).choice(flat.size, size=sample, replace=False)
        gf = g.reshape(-1)
        for i in idxs:
            orig = flat[i]

            def central(step):
                flat[i] = orig + step
                up = float(loss_fn().data)
                flat[i] = orig - step
                down = float(loss_fn().data)
                flat[i] = orig
                return (up - down) / (2.0 * step)

            d1, d2 = central(h), central(h / 2)
            # a relu kink inside the probed interval makes the estimate
            # depend on the step size (it averages the one-sided slopes);
            # a wrong analytic gradient does not.  Coordinates where the
            # two step sizes disagree straddle a kink and are skipped.
            if abs(d1 - d2) <= 1e-3 * max(abs(d1), abs(d2), 1e-4):
                gf[i] = d2
        grads.append(g)
    return grads


def analytic_grad(loss_fn, tensors):
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    ad.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_relative_error(analytic, numeric, floor=1e-4):
    """Max over coordinates of |a - n| / max(|a|, |n|, floor); NaNs skipped."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        mask = ~np.isnan(n)
        if not mask.any():
            continue
        a, n = a[mask], n[mask]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_gradients(loss_fn, tensors, h=1e-5, tol=1e-3, sample=None, rng=None):
    an = analytic_grad(loss_fn, tensors)
    nu = numeric_grad(loss_fn, tensors, h=h, sample=sample, rng=rng)
    err = max_relative_error(an, nu)
    return err, err < tol
