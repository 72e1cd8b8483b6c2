"""Differentiable primitives.

Each function takes :class:`Tensor` (or array-like) inputs and returns a
Tensor whose backward closure maps the output gradient to input gradients.
Shapes are validated eagerly; mismatches raise ``ValueError``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / b.data ** 2, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError("transpose expects a 2-d tensor")
    return make_result(a.data.T, (a,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# reductions and reshaping

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make_result(out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(out, tuple(tensors), backward)


def channel_slice(x, start, stop):
    """``x[:, start:stop]`` for NCHW tensors."""
    x = as_tensor(x)
    out = x.data[:, start:stop]

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return make_result(out, (x,), backward)


def apply_mask(x, mask):
    """Multiply by a constant (non-differentiable) array."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=x.dtype)
    if mask.shape != x.shape:
        raise ValueError(f"apply_mask: mask shape {mask.shape} != {x.shape}")
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# layer primitives

def _im2col(xp, k, stride):
    """Patch matrix ``(B, C*k*k, Ho*Wo)``: channel-major rows, one column per output pixel."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(b, c * k * k, ho * wo), ho, wo


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-d cross-correlation with zero padding (NCHW / OIkk)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    b, c, h, w = x.shape
    o, ci, k, k2 = kernel.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if k != k2:
        raise ValueError("conv2d: only square kernels are supported")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ValueError("conv2d: kernel larger than padded input")

    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols, ho, wo = _im2col(xp, k, stride)
    wmat = kernel.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    del cols  # recomputed in backward to keep the graph light
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
    out = out.reshape(b, o, ho, wo)

    def backward(g):
        g2 = g.reshape(b, o, ho * wo)
        gk = gb = gx = None
        if kernel.requires_grad:
            cols_, _, _ = _im2col(xp, k, stride)
            gk = np.tensordot(g2, cols_, axes=([0, 2], [0, 2])).reshape(kernel.shape)
            del cols_
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(b, c, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        gcols[:, :, i, j]
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return make_result(out, parents, backward)


def leaky_relu(x, slope=0.01):
    """``max(0, x) + slope * min(0, x)``."""
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,))


def _channel_window_sum(sq, half):
    """Sum of ``sq`` over channels ``[c-half, c+half]`` clipped to range."""
    out = sq.copy()
    for d in range(1, half + 1):
        out[:, d:] += sq[:, :-d]
        out[:, :-d] += sq[:, d:]
    return out


def local_response_norm(x, n=5, k=1.0, alpha=1e-4, beta=0.75):
    """Cross-channel normalisation; window is channels ``c - n//2 .. c + n//2``."""
    x = as_tensor(x)
    if n <= 0:
        raise ValueError(f"local_response_norm: n must be positive, got {n}")
    if x.ndim < 2:
        raise ValueError("local_response_norm expects a (B, C, ...) tensor")
    half = n // 2
    denom = k + (alpha / n) * _channel_window_sum(x.data * x.data, half)
    out = x.data * denom ** (-beta)

    def backward(g):
        # symmetric window: j lies in window(c) iff c lies in window(j)
        scale = denom ** (-beta)
        t = g * x.data * scale / denom
        return (g * scale - (2.0 * beta * alpha / n) * x.data * _channel_window_sum(t, half),)

    return make_result(out, (x,), backward)


def group_norm(x, groups, gamma, delta, eps=1e-5):
    """Per-sample normalisation over (channels-in-group, H, W)."""
    x, gamma, delta = as_tensor(x), as_tensor(gamma), as_tensor(delta)
    b, c = x.shape[:2]
    if groups <= 0 or c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or delta.shape != (c,):
        raise ValueError(f"group_norm: affine params must have shape ({c},)")
    spatial = x.shape[2:]
    xg = x.data.reshape(b, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    bshape = (1, c) + (1,) * len(spatial)
    out = xhat * gamma.data.reshape(bshape) + delta.data.reshape(bshape)

    def backward(g):
        red = (0,) + tuple(range(2, x.ndim))
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gdelta = g.sum(axis=red) if delta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = (g * gamma.data.reshape(bshape)).reshape(b, groups, -1)
            xh = xhat.reshape(b, groups, -1)
            gx = inv * (gh - gh.mean(axis=2, keepdims=True)
                        - xh * (gh * xh).mean(axis=2, keepdims=True))
            gx = gx.reshape(x.shape)
        return gx, ggamma, gdelta

    return make_result(out, (x, gamma, delta), backward)


def avg_pool_channels(x):
    """Mean over the channel axis, keeping it as size 1."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[1] < 1:
        raise ValueError("avg_pool_channels expects (B, C, ...) with C >= 1")
    c = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True)
    return make_result(out, (x,), lambda g: (np.repeat(g, c, axis=1) / c,))


def repeat_channels(x, times):
    """Tile a (B, 1, ...) tensor along channels."""
    x = as_tensor(x)
    if x.shape[1] != 1:
        raise ValueError("repeat_channels expects a single-channel tensor")
    out = np.repeat(x.data, times, axis=1)
    return make_result(out, (x,), lambda g: (g.sum(axis=1, keepdims=True),))


def masked_linear(x, weight, mask, bias=None):
    """``x @ (weight * mask).T + bias`` with a fixed binary mask."""
    x, weight = as_tensor(x), as_tensor(weight)
    mask = np.asarray(mask)
    if weight.shape != mask.shape:
        raise ValueError(f"masked_linear: weight {weight.shape} vs mask {mask.shape}")
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"masked_linear: input {x.shape} incompatible with weight {weight.shape}")
    wm = weight.data * mask
    out = x.data @ wm.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError("masked_linear: bias shape mismatch")
        out = out + bias.data

    def backward(g):
        gx = g @ wm if x.requires_grad else None
        gw = (g.T @ x.data) * mask if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if bias.requires_grad else None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def l2_normalize(x, eps=0.0):
    """Row-wise L2 normalisation of a 2-d tensor.

    With ``eps == 0`` a zero row is an error; otherwise the norm is floored
    at ``eps``.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError("l2_normalize expects a 2-d tensor")
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if eps == 0.0 and np.any(norm == 0):
        rows = np.flatnonzero(norm[:, 0] == 0).tolist()
        raise ValueError(f"l2_normalize: zero-norm rows {rows}")
    clipped = norm < eps
    n = np.maximum(norm, eps)
    out = x.data / n

    def backward(g):
        proj = (g * out).sum(axis=1, keepdims=True)
        gx = (g - np.where(clipped, 0.0, out * proj)) / n
        return (gx,)

    return make_result(out, (x,), backward)


def cross_entropy(logits, targets):
    """Mean softmax cross-entropy; ``-inf`` logits are treated as masked."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    if logits.ndim != 2 or targets.shape != (n,):
        raise ValueError("cross_entropy expects (N, K) logits and N targets")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    s = ez.sum(axis=1, keepdims=True)
    logp_t = z[np.arange(n), targets] - zmax[:, 0] - np.log(s[:, 0])
    loss = -logp_t.mean()

    def backward(g):
        p = ez / s
        p[np.arange(n), targets] -= 1.0
        return (g * p / n,)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward)


def fill_diagonal(x, value):
    """Copy of a square matrix with its diagonal overwritten (no grad there)."""
    x = as_tensor(x)
    out = x.data.copy()
    np.fill_diagonal(out, value)

    def backward(g):
        g = g.copy()
        np.fill_diagonal(g, 0.0)
        return (g,)

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# spiking nonlinearities

def fast_sigmoid_grad(x, slope):
    """Pseudo-derivative ``1 / (1 + slope |x|)^2``."""
    return 1.0 / (1.0 + slope * np.abs(x)) ** 2


def spike(x, slope=25.0):
    """Heaviside step (``x >= 0``) with a fast-sigmoid surrogate gradient."""
    x = as_tensor(x)
    out = (x.data >= 0).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * fast_sigmoid_grad(x.data, slope),))


def soft_spike(x, slope=25.0):
    """Smooth counterpart of :func:`spike` whose true derivative is the surrogate.

    ``x / (1 + slope |x|)`` differentiates to exactly ``fast_sigmoid_grad``;
    used to check surrogate backprop paths against finite differences.
    """
    x = as_tensor(x)
    out = x.data / (1.0 + slope * np.abs(x.data))
    return make_result(out, (x,), lambda g: (g * fast_sigmoid_grad(x.data, slope),))


# Fused LIF pieces: one stored array per op keeps BPTT graphs small.

def lif_integrate(membrane, current, beta, gain):
    """``beta * membrane + gain * current`` (membrane may be None for U0 = 0)."""
    current = as_tensor(current)
    if membrane is None:
        return make_result(current.data * gain, (current,), lambda g: (g * gain,))
    membrane = as_tensor(membrane)
    out = membrane.data * beta + current.data * gain
    return make_result(out, (membrane, current), lambda g: (g * beta, g * gain))


def threshold_spike(u, threshold, slope=25.0, smooth=False):
    """Spike where ``u >= threshold``; surrogate gradient w.r.t. both inputs."""
    u = as_tensor(u)
    thr = as_tensor(threshold, dtype=u.dtype)
    x = u.data - thr.data
    out = x / (1.0 + slope * np.abs(x)) if smooth else (x >= 0).astype(u.dtype)
    del x

    def backward(g):
        gx = g * fast_sigmoid_grad(u.data - thr.data, slope)
        return gx, (_unbroadcast(-gx, thr.shape) if thr.requires_grad else None)

    return make_result(out, (u, thr), backward)


def lif_reset(u, spikes, threshold, mode="subtract", detach=True):
    """Post-spike reset: ``u - s * thr`` (subtract) or ``u * (1 - s)`` (zero)."""
    u, s = as_tensor(u), as_tensor(spikes)
    thr = as_tensor(threshold, dtype=u.dtype)
    if mode == "subtract":
        out = u.data - s.data * thr.data
    elif mode == "zero":
        out = u.data * (1.0 - s.data)
    else:
        raise ValueError(f"unknown reset mode {mode!r}")

    def backward(g):
        if mode == "subtract":
            gu = g
            gs = None if detach else -g * thr.data
            gthr = _unbroadcast(-g * s.data, thr.shape) if thr.requires_grad else None
        else:
            gu = g * (1.0 - s.data)
            gs = None if detach else -g * u.data
            gthr = None
        return gu, gs, gthr

    parents = (u, s, thr) if not detach else (u, s.detach(), thr)
    return make_result(out, parents, backward)
