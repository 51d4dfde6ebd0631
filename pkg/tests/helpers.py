"""Shared test utilities: finite differences and tiny reference kernels."""

from __future__ import annotations

import numpy as np

from fedgtea import numkit as nk


def numeric_directional(fn, arrays, direction_rng, h=1e-5):
    """Central finite difference of fn(*arrays) along one random direction.

    Returns (fd_value, directions); fn maps plain numpy arrays to a float.
    """
    dirs = [direction_rng.standard_normal(a.shape) for a in arrays]
    plus = fn(*[a + h * d for a, d in zip(arrays, dirs)])
    minus = fn(*[a - h * d for a, d in zip(arrays, dirs)])
    return (plus - minus) / (2 * h), dirs


def check_gradients(build_loss, arrays, seed=0, h=1e-5, rel_tol=1e-4, trials=3):
    """Compare taped gradients of build_loss against central differences.

    build_loss takes Tensors (requires_grad) and returns a scalar Tensor.
    The analytic directional derivative sum(grad . dir) must match the
    numeric one to rel_tol along `trials` random directions.
    """
    rng = np.random.default_rng(seed)
    tensors = [nk.parameter(a) for a in arrays]
    with nk.record() as tape:
        loss = build_loss(*tensors)
    tape.backward(loss)
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def eval_loss(*arrs):
        ts = [nk.constant(a) for a in arrs]
        return build_loss(*ts).item()

    for _ in range(trials):
        fd, dirs = numeric_directional(eval_loss, arrays, rng, h=h)
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        denom = max(abs(fd), abs(analytic), 1e-8)
        assert abs(fd - analytic) / denom <= rel_tol, (
            f"gradient mismatch: analytic={analytic!r} fd={fd!r}")


def conv2d_reference(x, w, stride, pad):
    """Naive nested-loop cross-correlation, the oracle for conv2d."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, oc, i, j] = (patch * w[oc]).sum()
    return out


def tconv2d_reference(x, w, stride, pad):
    """Naive transposed convolution, the oracle for transposed_conv2d."""
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    hh = (h - 1) * stride - 2 * pad + k
    ww = (wd - 1) * stride - 2 * pad + k
    full = np.zeros((n, cout, hh + 2 * pad, ww + 2 * pad))
    for b in range(n):
        for ci in range(cin):
            for i in range(h):
                for j in range(wd):
                    full[b, :, i * stride:i * stride + k, j * stride:j * stride + k] += (
                        x[b, ci, i, j] * w[ci])
    return full[:, :, pad:pad + hh, pad:pad + ww]
