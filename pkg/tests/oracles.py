"""Independent reference computations used by the tests."""

import itertools

import numpy as np
import torch


def sum_sq_mean(a, b):
    """Mean squared difference via an explicit elementwise loop."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    total = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        total += (x - y) * (x - y)
    return total / a.size


def pairwise_auroc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = 0.0
    for p, n in itertools.product(pos, neg):
        if p > n:
            wins += 1.0
        elif p == n:
            wins += 0.5
    return wins / (len(pos) * len(neg))


def sample_scalar_params(model, n, seed):
    """``n`` (name, flat index) pairs drawn uniformly over all scalar parameters."""
    named = [(name, p) for name, p in model.named_parameters()]
    sizes = np.array([p.numel() for _, p in named])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=n, replace=False)
    bounds = np.cumsum(sizes)
    picks = []
    for f in flat:
        k = int(np.searchsorted(bounds, f, side="right"))
        offset = int(f - (bounds[k - 1] if k else 0))
        picks.append((named[k][0], offset))
    return picks


def finite_difference_check(model, loss_fn, n_params=20, h=1e-3, seed=0):
    """Compare autograd against central differences in float64.

    ``loss_fn(model)`` must return a scalar tensor. Returns a list of
    (name, index, analytic, numeric, relative error).
    """
    model = model.double()
    model.zero_grad()
    loss_fn(model).backward()
    params = dict(model.named_parameters())
    out = []
    with torch.no_grad():
        for name, idx in sample_scalar_params(model, n_params, seed):
            p = params[name].view(-1)
            analytic = float(params[name].grad.view(-1)[idx])
            orig = float(p[idx])
            p[idx] = orig + h
            up = float(loss_fn(model))
            p[idx] = orig - h
            down = float(loss_fn(model))
            p[idx] = orig
            numeric = (up - down) / (2 * h)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            out.append((name, idx, analytic, numeric, rel))
    return out
