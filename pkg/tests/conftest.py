"""Shared numeric helpers: central-difference gradients and comparisons."""

import numpy as np

from fragdiff._tensor import Array, Graph, backward, mul, sum_all


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of a scalar function at x (float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def check_grad(op, arrays, rtol=1e-5, atol=1e-7, eps=1e-6, seed=0):
    """Check backward() of sum(w * op(*arrays)) against central differences.

    All inputs are promoted to float64 so the finite-difference error is
    far below the tolerances.
    """
    rng = np.random.default_rng(seed)
    arrs = [Array(np.asarray(a, dtype=np.float64), requires_grad=True) for a in arrays]
    with Graph() as graph:
        out = op(*arrs)
        w = Array(rng.standard_normal(out.shape))
        loss = sum_all(mul(out, w))
    grads = backward(loss, graph, params=arrs)

    for i, a in enumerate(arrs):
        def f(x, i=i):
            vals = [arr.data if j != i else x for j, arr in enumerate(arrs)]
            return float(np.sum(op(*[Array(v) for v in vals]).data * w.data))

        numeric = fd_grad(f, a.data, eps=eps)
        np.testing.assert_allclose(grads[a], numeric, rtol=rtol, atol=atol)
