"""Multi-stage temporal convolutional segmentation and count-based correction.

Parameter names follow ``s{stage}.{layer}.{w|b}``: ``in`` is the 1x1 input
projection, ``l{i}.d``/``l{i}.p`` are the dilated and pointwise convolutions
of residual layer ``i`` (dilation ``2**i``), ``out`` maps to class logits.
Stage 0 reads embeddings; later stages read the previous stage's softmax.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernel as K
from .data import EmbeddingSequence, SegmentLabeling, labels_to_segments
from .errors import DimensionError
from .rubric import ELEMENT_TYPES, N_CLASSES, ActionType

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MsTcnConfig:
    n_stages: int = 2
    n_layers: int = 6
    channels: int = 32
    kernel_size: int = 3
    lambda_smooth: float = 0.15
    epsilon: float = 4.0


def init_mstcn(rng: np.random.Generator, dim: int, config: MsTcnConfig = MsTcnConfig()) -> K.Params:
    p: K.Params = {}
    F = config.channels
    for s in range(config.n_stages):
        c_in = dim if s == 0 else N_CLASSES
        p[f"s{s}.in.w"], p[f"s{s}.in.b"] = K.init_conv(rng, 1, c_in, F)
        for i in range(config.n_layers):
            p[f"s{s}.l{i}.d.w"], p[f"s{s}.l{i}.d.b"] = K.init_conv(rng, config.kernel_size, F, F)
            p[f"s{s}.l{i}.p.w"], p[f"s{s}.l{i}.p.b"] = K.init_conv(rng, 1, F, F)
        p[f"s{s}.out.w"], p[f"s{s}.out.b"] = K.init_conv(rng, 1, F, N_CLASSES)
    return p


def geometry(params: Mapping[str, np.ndarray]) -> tuple[int, int]:
    """``(n_stages, n_layers)`` recovered from parameter names."""
    stages = {int(m.group(1)) for k in params if (m := re.match(r"s(\d+)\.", k))}
    layers = {int(m.group(1)) for k in params if (m := re.match(r"s0\.l(\d+)\.", k))}
    return len(stages), len(layers)


def _fwd_stage(p: Mapping[str, np.ndarray], s: int, n_layers: int, u: np.ndarray, m: np.ndarray):
    mm = m[..., None]
    h = K.conv1d(u, p[f"s{s}.in.w"], p[f"s{s}.in.b"]) * mm
    hs, acts = [h], []
    for i in range(n_layers):
        a = K.conv1d(h, p[f"s{s}.l{i}.d.w"], p[f"s{s}.l{i}.d.b"], dilation=2**i)
        o = K.conv1d(K.relu(a), p[f"s{s}.l{i}.p.w"], p[f"s{s}.l{i}.p.b"])
        h = (h + o) * mm
        acts.append(a)
        hs.append(h)
    logits = K.conv1d(h, p[f"s{s}.out.w"], p[f"s{s}.out.b"]) * mm
    return logits, (u, hs, acts)


def forward(params: Mapping[str, np.ndarray], x: np.ndarray, mask: np.ndarray):
    """Batched forward pass.

    ``x`` is ``(B, T, D)`` (or ``(T, D)``), ``mask`` the matching validity
    mask.  Returns the per-stage logits (masked to zero on padded windows)
    and an opaque cache for :func:`backward`.
    """
    n_stages, n_layers = geometry(params)
    if x.shape[-1] != params["s0.in.w"].shape[1]:
        raise DimensionError(f"segmentation network expects dimension {params['s0.in.w'].shape[1]}, got {x.shape[-1]}")
    m = np.asarray(mask, dtype=float)
    u = x * m[..., None]
    outs, caches = [], []
    for s in range(n_stages):
        logits, cache = _fwd_stage(params, s, n_layers, u, m)
        probs = K.softmax_rows(logits)
        outs.append(logits)
        caches.append(cache + (probs,))
        u = probs * m[..., None]
    return outs, (caches, m, n_layers)


def backward(params: Mapping[str, np.ndarray], dlogits: Sequence[np.ndarray], cache) -> K.Params:
    caches, m, n_layers = cache
    mm = m[..., None]
    grads: K.Params = {}
    carry = None  # gradient flowing into the next stage's input
    for s in reversed(range(len(caches))):
        u, hs, acts, probs = caches[s]
        g_logits = dlogits[s].copy()
        if carry is not None:
            g_logits += K.softmax_backward(carry * mm, probs)
        g = g_logits * mm
        dh, grads[f"s{s}.out.w"], grads[f"s{s}.out.b"] = K.conv1d_backward(g, hs[-1], params[f"s{s}.out.w"])
        for i in reversed(range(n_layers)):
            dsum = dh * mm
            a = acts[i]
            dr, grads[f"s{s}.l{i}.p.w"], grads[f"s{s}.l{i}.p.b"] = K.conv1d_backward(dsum, K.relu(a), params[f"s{s}.l{i}.p.w"])
            da = K.relu_backward(dr, a)
            dprev, grads[f"s{s}.l{i}.d.w"], grads[f"s{s}.l{i}.d.b"] = K.conv1d_backward(
                da, hs[i], params[f"s{s}.l{i}.d.w"], dilation=2**i
            )
            dh = dsum + dprev
        du, grads[f"s{s}.in.w"], grads[f"s{s}.in.b"] = K.conv1d_backward(dh * mm, u, params[f"s{s}.in.w"])
        carry = du
    return grads


def mstcn_forward(embeddings: EmbeddingSequence, params: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    """Per-stage ``T x 4`` logits for a single sequence."""
    outs, _ = forward(params, embeddings.windows, embeddings.mask)
    return outs


# --------------------------------------------------------------------------
# losses


def smoothing_loss(logits: np.ndarray, epsilon: float = 4.0, mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Truncated squared difference of adjacent-window log-probabilities.

    Each per-class term ``(log p_t - log p_{t-1})**2`` is clamped above at
    ``epsilon`` and averaged over valid adjacent pairs and classes; for a
    batch the per-sequence values are averaged.  Returns the loss and its
    gradient with respect to ``logits`` (zero where the clamp is active).
    """
    batched = logits.ndim == 3
    L = logits if batched else logits[None]
    B, T, Kc = L.shape
    m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=float).reshape(B, T)
    if T < 2:
        return 0.0, np.zeros_like(logits)
    logp = K.log_softmax_rows(L)
    diff = logp[:, 1:] - logp[:, :-1]
    sq = diff * diff
    pair = m[:, 1:] * m[:, :-1]
    n_pairs = pair.sum(axis=1)
    w = np.divide(pair, n_pairs[:, None] * Kc, out=np.zeros_like(pair), where=n_pairs[:, None] > 0) / B
    loss = float((np.minimum(sq, epsilon) * w[..., None]).sum())
    ddiff = 2.0 * diff * (sq < epsilon) * w[..., None]
    dlogp = np.zeros_like(logp)
    dlogp[:, 1:] += ddiff
    dlogp[:, :-1] -= ddiff
    dlogits = K.log_softmax_backward(dlogp, logp)
    return loss, (dlogits if batched else dlogits[0])


def segmentation_loss(
    stage_logits: Sequence[np.ndarray],
    labels: np.ndarray,
    mask: np.ndarray,
    lambda_smooth: float = 0.15,
    epsilon: float = 4.0,
) -> tuple[float, list[np.ndarray]]:
    """Sum over stages of cross-entropy plus weighted smoothing, with gradients."""
    total = 0.0
    grads = []
    for logits in stage_logits:
        ce, g = K.cross_entropy_logits(logits, labels, mask)
        total += ce
        if lambda_smooth:
            sm, gs = smoothing_loss(logits, epsilon, mask)
            total += lambda_smooth * sm
            g = g + lambda_smooth * gs
        grads.append(g)
    return total, grads


# --------------------------------------------------------------------------
# decoding and correction


def decode_labels(logits: np.ndarray, mask: np.ndarray | None = None) -> SegmentLabeling:
    """Per-window argmax over valid windows; ties go to the lowest class index."""
    logits = np.asarray(logits)
    valid = logits if mask is None else logits[np.asarray(mask, dtype=bool)]
    return SegmentLabeling(np.argmax(valid, axis=-1))


def correct_segments(labels: SegmentLabeling, counts: Mapping[ActionType, int]) -> SegmentLabeling:
    """Keep the ``n_a`` longest runs of each element type; everything else becomes Transition.

    Ties in run length go to the earlier run.  When fewer runs exist than
    planned, all are kept and the shortfall is recorded in ``deficits``.
    """
    runs = labels_to_segments(labels.labels)
    out = np.zeros(len(labels), dtype=np.int64)
    deficits: dict[ActionType, int] = {}
    for a in ELEMENT_TYPES:
        mine = [r for r in runs if r.action is a]
        want = int(counts.get(a, 0))
        if len(mine) < want:
            deficits[a] = want - len(mine)
        mine.sort(key=lambda r: (-r.length, r.start))
        for r in mine[:want]:
            out[r.start : r.end] = int(a)
    if deficits:
        log.warning(
            "count deficit after correction: %s",
            ", ".join(f"{a.name} short by {n}" for a, n in deficits.items()),
        )
    return SegmentLabeling(out, deficits)
