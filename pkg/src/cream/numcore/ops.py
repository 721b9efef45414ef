"""Neural-net ops on top of the tape: activations, normalizations, losses."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tensor, _emit

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _emit("exp", data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _emit("log", data, (a,), lambda g: (g / a.data,))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * phi

    def backward_fn(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (phi + x * pdf),)

    return _emit("gelu", data, (a,), backward_fn)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis (max-shifted for stability)."""
    data = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(data, out=data)
    data /= data.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _emit("softmax", data, (a,), backward_fn)


def layer_norm(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = centered * inv
    dim = a.data.shape[-1]

    def backward_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * data).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - data * gx),)

    return _emit("layer_norm", data, (a,), backward_fn)


def l2_normalize(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale rows (last axis) to unit length; norms below eps divide by eps."""
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    clamped = np.maximum(norm, eps)
    data = a.data / clamped
    active = (norm > eps).astype(a.data.dtype)

    def backward_fn(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return ((g - active * data * dot) / clamped,)

    return _emit("l2_normalize", data, (a,), backward_fn)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Row-wise cosine of two equal-shape batches of vectors."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: shapes {a.shape} and {b.shape} differ")
    na = l2_normalize(a, eps)
    nb = l2_normalize(b, eps)
    from .tensor import mul, tensor_sum

    return tensor_sum(mul(na, nb), axis=-1)


def take_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding): out[i] = table[indices[i]]; repeats allowed."""
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise ShapeError(f"take_rows: indices must be integers, got dtype {idx.dtype}")
    data = table.data[idx]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _emit("take_rows", data, (table,), backward_fn)


def take_at(m: Tensor, rows, cols) -> Tensor:
    """Gather m[rows[i], cols[i]] into a vector; repeats allowed."""
    r = np.asarray(rows)
    c = np.asarray(cols)
    data = m.data[r, c]

    def backward_fn(g):
        gm = np.zeros_like(m.data)
        np.add.at(gm, (r, c), g)
        return (gm,)

    return _emit("take_at", data, (m,), backward_fn)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """softmax(q @ k^T / sqrt(d_head) [+ additive mask]) @ v.

    q: (..., m, d_head), k/v: (..., mem, d_head); mask broadcasts against the
    (..., m, mem) score array with -1e9 at disallowed positions.
    """
    from .tensor import add, matmul, mul, transpose

    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query dim {q.shape} does not match key dim {k.shape}")
    axes = list(range(k.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = mul(matmul(q, transpose(k, axes)), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = add(scores, mask)
    return matmul(softmax(scores), v)


def cross_entropy(logits: Tensor, targets, ignore_index: int = -1) -> Tensor:
    """Mean token cross-entropy over positions whose target != ignore_index.

    Ignored positions contribute exactly zero loss and zero gradient.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    t = np.asarray(targets)
    if t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy: targets shape {t.shape} does not match logits {logits.shape}"
        )
    keep = t != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise ShapeError("cross_entropy: every position carries the ignore index")
    safe_t = np.where(keep, t, 0)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True)) + logits.data.max(
        axis=-1, keepdims=True
    )
    nll = lse[:, 0] - logits.data[np.arange(t.shape[0]), safe_t]
    data = np.asarray((nll * keep).sum() / count)

    def backward_fn(g):
        probs = np.exp(logits.data - lse)
        probs[np.arange(t.shape[0]), safe_t] -= 1.0
        probs *= (keep / count).astype(logits.data.dtype)[:, None]
        return (probs * g,)

    return _emit("cross_entropy", data, (logits,), backward_fn)
