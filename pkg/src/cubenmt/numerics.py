"""Dense tensor helpers shared by the model, trainer and decoder.

Tensors are plain ``numpy.ndarray`` objects in row-major (C) order.  Storage
is float32; reductions may accumulate in float64.
"""

import numpy as np

DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


def as_tensor(x, dtype=DTYPE):
    return np.ascontiguousarray(x, dtype=dtype)


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError("matmul needs at least 1-d operands")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax(v, axis=-1):
    v = np.asarray(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("softmax of an empty tensor")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("log_softmax of an empty tensor")
    return v - logsumexp(v, axis=axis, keepdims=True)


def logsumexp(v, axis=-1, keepdims=False):
    v = np.asarray(v)
    m = v.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out


def sigmoid(x):
    # tanh form: no overflow for large |x|, and one ufunc call
    x = np.asarray(x)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(x):
    return np.tanh(x)


def _check_same(a, b):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def add(a, b):
    _check_same(a, b)
    return np.add(a, b)


def mul(a, b):
    _check_same(a, b)
    return np.multiply(a, b)


def concat(*parts):
    parts = [np.asarray(p) for p in parts]
    if not parts:
        raise DimensionError("concat of nothing")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(f"concat leading dims differ: {lead} vs {p.shape[:-1]}")
    return np.concatenate(parts, axis=-1)


def k_smallest(values, k):
    """Indices of the ``k`` smallest entries, ordered by (value, index).

    Ties are broken by the lower index, so the result is the same on every
    platform regardless of how ``argpartition`` orders equal keys.
    """
    values = np.asarray(values).ravel()
    n = values.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k < n:
        thresh = np.partition(values, k - 1)[k - 1]
        cand = np.flatnonzero(values <= thresh)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, values[cand]))
    return cand[order[:k]]


def finite_diff_grad(f, x, eps=1e-3):
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return grad
