"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Param


def numerical_grad(f, arrays, index, step=1e-5):
    """d f(*arrays) / d arrays[index] by central differences (float64)."""
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = f(*arrays)
        x[i] = orig - step
        lo = f(*arrays)
        x[i] = orig
        grad[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def gradcheck(fn, arrays, step=1e-5, reduce=None):
    """Compare autodiff and numerical gradients of ``sum(reduce * fn(...))``.

    ``fn`` takes Params and returns a Tensor.  ``reduce`` is a fixed random
    projection (drawn from seed 0 when omitted) so every output element
    contributes.  Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    params = [Param(a, dtype=np.float64) for a in arrays]
    out = fn(*params)
    if reduce is None:
        reduce = np.random.default_rng(0).standard_normal(out.shape)
    loss = (out * reduce).sum() if out.ndim else out
    loss.backward()

    def scalar(*xs):
        o = fn(*[Param(x, dtype=np.float64) for x in xs]).data
        return float(np.sum(o * reduce)) if np.ndim(o) else float(o)

    worst = 0.0
    for i, p in enumerate(params):
        num = numerical_grad(scalar, arrays, i, step)
        worst = max(worst, relative_error(p.grad, num))
    return worst
