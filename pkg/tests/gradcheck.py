"""Central finite-difference gradient oracle shared by the gradient tests."""

import numpy as np
import torch


def finite_difference_check(loss_fn, params, n_checks=24, steps=(1e-6, 1e-7), seed=0, candidates=None):
    """Compare autograd with central differences on randomly chosen scalar
    entries of ``params`` (optionally restricted to the flat indices in
    ``candidates``). Returns a list of (analytic, numeric, rel_err).

    ReLU networks are only piecewise smooth, so each entry is probed with a
    short ladder of step sizes and the closest estimate is kept; a step
    that straddles a kink is then replaced by a smaller one.
    """
    gen = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    sizes = np.array([p.numel() for p in params])
    pool = np.arange(sizes.sum()) if candidates is None else np.asarray(candidates)
    picks = gen.choice(pool, size=n_checks, replace=False)
    bounds = np.cumsum(sizes)
    results = []
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(bounds, flat, side="right"))
            idx = int(flat - (bounds[k - 1] if k else 0))
            view = params[k].view(-1)
            orig = view[idx].item()
            ana = analytic[k].view(-1)[idx].item()
            best = None
            for eps in steps:
                view[idx] = orig + eps
                up = loss_fn().item()
                view[idx] = orig - eps
                down = loss_fn().item()
                view[idx] = orig
                num = (up - down) / (2 * eps)
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
                if best is None or rel < best[2]:
                    best = (ana, num, rel)
            results.append(best)
    return results
