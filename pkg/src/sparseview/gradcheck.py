"""Central finite-difference gradient checking.

The numeric side only ever re-runs forward evaluations, so it stays
independent of the backward implementation it is used to verify.
"""

import numpy as np

from . import autodiff as ad


def numeric_grads(fn, tensors, eps=1e-4):
    """Central-difference d(fn)/d(tensor) for each tensor, perturbing in place.

    fn is a zero-argument callable returning a python float; tensors should
    be float64 for the checks to have headroom.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn()
            flat[i] = orig - eps
            fm = fn()
            flat[i] = orig
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g.reshape(t.shape))
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    """max |analytic - numeric| / max(|analytic|, floor), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check(build, params, eps=1e-4, tol=1e-4):
    """Verify analytic grads of a scalar-valued builder against central differences.

    `build` constructs the loss tensor from `params` (called fresh for every
    evaluation).  Returns the worst relative error over all parameters.
    """
    for p in params:
        p.grad = None
    with ad.Graph() as g:
        loss = build()
        g.backward(loss)
    analytic = []
    for p in params:
        if p.grad is None:
            raise AssertionError("parameter received no gradient")
        analytic.append(np.array(p.grad, dtype=np.float64))

    def forward():
        with ad.no_grad():
            return build().item()

    numeric = numeric_grads(forward, params, eps=eps)
    worst = max(max_rel_error(a, n) for a, n in zip(analytic, numeric))
    if worst >= tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} >= {tol}")
    return worst
