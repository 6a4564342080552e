"""Dense kernels with hand-written backward passes.

Everything here works on float64 numpy arrays. Batched kernels accept
arbitrary leading dimensions that broadcast like ``np.matmul``; their
backward passes reduce gradients back to the operand shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateVectorError, NumericError, ShapeError

COSINE_EPS = 1e-12


def as_mat(data, *, ndim=2, name="matrix"):
    """Return ``data`` as a float64 array, rejecting NaN/Inf and wrong rank."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def cosine(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"cosine of vectors with shapes {x.shape} and {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def cosine_rows(x, y, *, eps=None):
    """Row-wise cosine along the last axis.

    Returns ``(cos, cache)``. With ``eps=None`` a zero-norm row raises;
    otherwise norms are clamped below at ``eps``.
    """
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    if eps is None:
        if np.any(nx == 0.0) or np.any(ny == 0.0):
            raise DegenerateVectorError("cosine of a zero-norm vector")
    else:
        nx = np.maximum(nx, eps)
        ny = np.maximum(ny, eps)
    cos = np.sum(x * y, axis=-1) / (nx * ny)
    return cos, (x, y, nx, ny, cos)


def cosine_rows_backward(dcos, cache):
    x, y, nx, ny, cos = cache
    dcos = dcos[..., None]
    inv = 1.0 / (nx * ny)[..., None]
    dx = dcos * (y * inv - cos[..., None] * x / (nx**2)[..., None])
    dy = dcos * (x * inv - cos[..., None] * y / (ny**2)[..., None])
    return dx, dy


def softmax_rows(logits, temperature=1.0, mask=None):
    """Softmax along the last axis of ``logits / temperature``.

    ``mask`` (broadcastable, boolean) marks admissible entries; masked
    entries get probability zero. Every row needs at least one admissible
    entry.
    """
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_backward(dp, p, temperature=1.0):
    """Gradient w.r.t. the logits given the upstream gradient ``dp``."""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) / temperature


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def sdp_attention(q, k, v, key_mask=None, *, return_cache=False):
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d)) v``.

    ``q``: (..., M, d), ``k``: (..., N, d), ``v``: (..., N, e). Leading
    dimensions broadcast. ``key_mask`` has shape (..., N).
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
        raise ShapeError("attention operands must be at least 2-D")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = (q @ np.swapaxes(k, -1, -2)) * scale
    mask = None if key_mask is None else np.asarray(key_mask, bool)[..., None, :]
    attn = softmax_rows(logits, 1.0, mask)
    out = attn @ v
    if return_cache:
        return out, (q, k, v, attn, scale)
    return out


def sdp_attention_backward(dout, cache):
    """Return ``(dq, dk, dv)`` reduced to the operand shapes."""
    q, k, v, attn, scale = cache
    dattn = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn, -1, -2) @ dout
    dlogits = softmax_rows_backward(dattn, attn) * scale
    dq = dlogits @ k
    dk = np.swapaxes(dlogits, -1, -2) @ q
    return unbroadcast(dq, q.shape), unbroadcast(dk, k.shape), unbroadcast(dv, v.shape)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param):
        return cls(np.zeros_like(param), np.zeros_like(param))


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=None):
    """Apply one bias-corrected Adam update to ``param`` in place.

    ``t`` is the 1-based step count; when omitted ``state.t + 1`` is used.
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(f"adam_step: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ConfigError("Adam step count starts at 1")
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    state.t = t
    m_hat = state.m / (1.0 - beta1**t)
    v_hat = state.v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


@dataclass
class Adam:
    """Adam over a dict of named parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        for name, p in params.items():
            g = grads[name]
            state = self.states.get(name)
            if state is None:
                state = self.states[name] = AdamState.zeros_like(p)
            adam_step(p, g, state, lr, self.beta1, self.beta2, self.eps)


def finite_diff_grad(f, at, h=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``at``.

    ``at`` is perturbed in place and restored, so ``f`` may close over it.
    """
    if not h > 0:
        raise ConfigError("finite difference step must be positive")
    grad = np.zeros(at.shape, dtype=np.float64)
    for idx in np.ndindex(at.shape):
        orig = at[idx]
        at[idx] = orig + h
        fp = f(at)
        at[idx] = orig - h
        fm = f(at)
        at[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at entry {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
