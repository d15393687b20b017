"""Central finite-difference gradient checking (h = 1e-5, float64)."""

import numpy as np

from .tensor import backward


def max_relative_error(fn, tensors, h=1e-5, max_coords=24, rng=None):
    """Compare analytic gradients of the scalar `fn()` against central
    finite differences with respect to every tensor in `tensors`.

    For large tensors a random subset of at most `max_coords` coordinates is
    probed per tensor.  Returns the worst relative error observed, where
    rel = |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    rng = rng or np.random.default_rng(0)
    loss = fn()
    backward(loss)
    grads = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = fn().item()
            flat[c] = orig - h
            fm = fn().item()
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            analytic = g.reshape(-1)[c]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
