"""Small differentiable numerical kernel.

Every layer is a pair of pure functions: ``f(x, params...)`` computes the
forward value and ``f_backward(dout, x, params...)`` returns the gradients
with respect to the input and parameters.  Nothing is cached between the two
calls, so the same parameters can be evaluated from several places at once.

Arrays are float64 throughout.  Sequence tensors are ``(T, C)`` or batched
``(B, T, C)``; the time axis is always ``-2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DimensionError, LabelError

Params = dict[str, np.ndarray]


class EmptyMaskWarning(RuntimeWarning):
    """A loss was requested over a sequence with no valid windows."""


# --------------------------------------------------------------------------
# initialisation


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_conv(rng: np.random.Generator, kernel_size: int, c_in: int, c_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``(k, c_in, c_out)`` and bias ``(c_out,)``."""
    fan_in = kernel_size * c_in
    w = uniform_init(rng, (kernel_size, c_in, c_out), fan_in)
    b = uniform_init(rng, (c_out,), fan_in)
    return w, b


def init_dense(rng: np.random.Generator, d_in: int, d_out: int) -> tuple[np.ndarray, np.ndarray]:
    return uniform_init(rng, (d_in, d_out), d_in), uniform_init(rng, (d_out,), d_in)


# --------------------------------------------------------------------------
# dilated 1-D convolution with same padding


def _offsets(kernel_size: int, dilation: int) -> list[int]:
    if kernel_size % 2 != 1:
        raise DimensionError(f"kernel size must be odd, got {kernel_size}")
    if dilation < 1:
        raise DimensionError(f"dilation must be positive, got {dilation}")
    half = (kernel_size - 1) // 2
    return [dilation * (j - half) for j in range(kernel_size)]


def _tap_slices(T: int, offset: int) -> tuple[slice, slice]:
    """(output rows, input rows) touched by a tap reading ``x[t + offset]``."""
    out = slice(max(-offset, 0), T - max(offset, 0))
    src = slice(max(offset, 0), T + min(offset, 0))
    return out, src


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> None:
    if w.ndim != 3:
        raise DimensionError(f"conv weight must be (k, c_in, c_out), got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"conv expects {w.shape[1]} input channels, got {x.shape[-1]}")
    if b.shape != (w.shape[2],):
        raise DimensionError(f"conv bias shape {b.shape} does not match {w.shape[2]} outputs")


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Same-padded dilated convolution along the time axis.

    Output window ``t`` is ``b + sum_j x[t + d*(j - (k-1)/2)] @ w[j]`` where
    positions outside ``[0, T)`` read as zero, so the output length always
    equals the input length.
    """
    _check_conv(x, w, b)
    k, c_in, c_out = w.shape
    offs = _offsets(k, dilation)
    T = x.shape[-2]
    center = k // 2
    # one matmul for all taps, then shift-and-add the per-tap outputs
    y = x @ np.concatenate(list(w), axis=1)
    out = y[..., center * c_out : (center + 1) * c_out] + b
    for j, o in enumerate(offs):
        if j == center or abs(o) >= T:
            continue
        dst, src = _tap_slices(T, o)
        out[..., dst, :] += y[..., src, j * c_out : (j + 1) * c_out]
    return out


def _outer_sum(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``sum over all leading/time axes of x[..., t, :]^T d[..., t, :]``."""
    if x.ndim == 2:
        return x.T @ d
    prod = np.swapaxes(x, -1, -2) @ d
    return prod.reshape(-1, *prod.shape[-2:]).sum(axis=0)


def conv1d_backward(
    dout: np.ndarray, x: np.ndarray, w: np.ndarray, dilation: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k, c_in, c_out = w.shape
    offs = _offsets(k, dilation)
    T = x.shape[-2]
    center = k // 2
    g = dout @ np.concatenate([wj.T for wj in w], axis=1)  # (..., T, k * c_in)
    dx = g[..., center * c_in : (center + 1) * c_in].copy()
    dw = np.zeros_like(w)
    dw[center] = _outer_sum(x, dout)
    for j, o in enumerate(offs):
        if j == center or abs(o) >= T:
            continue
        dst, src = _tap_slices(T, o)
        dx[..., src, :] += g[..., dst, j * c_in : (j + 1) * c_in]
        dw[j] = _outer_sum(x[..., src, :], dout[..., dst, :])
    return dx, dw, dout.reshape(-1, c_out).sum(axis=0)


# --------------------------------------------------------------------------
# dense, activations, pooling


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"dense expects input width {w.shape[0]}, got {x.shape[-1]}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"dense bias shape {b.shape} does not match {w.shape[1]} outputs")
    return x @ w + b


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dout @ w.T, _outer_sum(x, dout), dout.reshape(-1, w.shape[1]).sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, stabilised by max subtraction."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dout: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_softmax_backward(dout: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return dout - np.exp(logp) * dout.sum(axis=-1, keepdims=True)


def masked_mean_pool(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Average over valid windows only: ``(..., T, C), (..., T) -> (..., C)``."""
    m = np.asarray(mask, dtype=float)
    count = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    return (x * m[..., None]).sum(axis=-2) / count


def masked_mean_pool_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=float)
    count = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    return (dout / count)[..., None, :] * m[..., None]


def clamp(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(x, lo, hi)


def clamp_backward(dout: np.ndarray, x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return dout * ((x >= lo) & (x <= hi))


# --------------------------------------------------------------------------
# losses


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


def cross_entropy(probabilities: np.ndarray, labels, mask=None) -> float:
    """Mean of ``-log p[label]`` over valid windows of a ``(T, K)`` probability matrix.

    Returns 0 (with :class:`EmptyMaskWarning`) when no window is valid.
    """
    p = np.asarray(probabilities, dtype=float)
    T, K = p.shape
    labels = _check_labels(labels, K)
    if labels.shape != (T,):
        raise DimensionError(f"expected {T} labels, got {labels.shape}")
    m = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        warnings.warn("cross-entropy over an empty mask is defined as 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    picked = p[np.arange(T), labels][m]
    return float(-np.mean(np.log(picked)))


def cross_entropy_logits(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy straight from logits, with its gradient.

    Accepts ``(T, K)`` or batched ``(B, T, K)``.  Each sequence contributes its
    mean over valid windows; the batch value is the mean over sequences.
    """
    batched = logits.ndim == 3
    L = logits if batched else logits[None]
    y = _check_labels(labels, L.shape[-1]).reshape(L.shape[:2])
    m = np.asarray(mask, dtype=float).reshape(L.shape[:2])
    B, T, K = L.shape
    logp = log_softmax_rows(L)
    counts = m.sum(axis=1)
    if np.any(counts == 0):
        warnings.warn("cross-entropy over an empty mask is defined as 0", EmptyMaskWarning, stacklevel=2)
    weight = np.divide(m, counts[:, None], out=np.zeros_like(m), where=counts[:, None] > 0) / B
    y_safe = np.where(m > 0, y, 0)
    picked = np.take_along_axis(logp, y_safe[..., None], axis=-1)[..., 0]
    loss = float(-(picked * weight).sum())
    dlogp = np.zeros_like(logp)
    np.put_along_axis(dlogp, y_safe[..., None], -weight[..., None], axis=-1)
    dlogits = log_softmax_backward(dlogp, logp)
    return loss, (dlogits if batched else dlogits[0])


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=float)
    diff = pred - np.asarray(target, dtype=float)
    if diff.size == 0:
        return 0.0, np.zeros_like(pred)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# --------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Mapping[str, np.ndarray] = field(default_factory=dict)
    v: Mapping[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: Mapping[str, np.ndarray], lr: float = 5e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return AdamState(lr, beta1, beta2, eps, 0, zeros, {k: z.copy() for k, z in zeros.items()})


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update.  Inputs are not modified.

    Parameters without a gradient entry are carried over unchanged (and their
    moments untouched).
    """
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_params: Params = {}
    new_m: dict[str, np.ndarray] = dict(state.m)
    new_v: dict[str, np.ndarray] = dict(state.v)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        new_m[name], new_v[name] = m, v
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new_params, AdamState(state.lr, b1, b2, state.eps, step, new_m, new_v)


# --------------------------------------------------------------------------
# gradient verification


def grad_check(
    loss_and_grad: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_and_grad(params) -> (loss, grads)``.  For each parameter array the
    error is ``||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-6)``
    over the checked coordinates; ``max_coords`` samples at most that many
    coordinates per array (seeded) to keep large networks affordable.
    """
    base = {k: np.array(v, dtype=float, copy=True) for k, v in params.items()}
    _, analytic = loss_and_grad(base)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, value in base.items():
        if name not in analytic:
            continue
        n = value.size
        idx = np.arange(n)
        if max_coords is not None and n > max_coords:
            idx = np.sort(rng.choice(n, size=max_coords, replace=False))
        flat = value.reshape(-1)
        numeric = np.empty(len(idx))
        for i, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + h
            plus, _ = loss_and_grad(base)
            flat[j] = orig - h
            minus, _ = loss_and_grad(base)
            flat[j] = orig
            numeric[i] = (plus - minus) / (2.0 * h)
        a = np.asarray(analytic[name]).reshape(-1)[idx]
        # floor keeps round-off noise on all-zero gradients from reading as error
        denom = max(np.linalg.norm(a) + np.linalg.norm(numeric), 1e-6)
        worst = max(worst, float(np.linalg.norm(a - numeric) / denom))
    return worst
