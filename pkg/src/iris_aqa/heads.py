"""Regression heads over embedding blocks.

All heads share one shape: two same-padded convolutions with ReLU, mean
pooling over valid windows, an optional one-hot condition concatenated to
the pooled features, two dense layers, then a de-standardisation
``mean + std * raw`` and a hard clamp to the output range.  ``norm.mean`` and
``norm.std`` are fitted on training targets and never receive gradients.

* GOE head: per element block, conditioned on Jump/Spin/StepSequence, 1 output in [-5, 5].
* PCS head: whole sequence, unconditioned, 5 outputs in [0, 10].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernel as K
from .data import EmbeddingSequence, PerformanceRecord
from .errors import DimensionError
from .rubric import ELEMENT_TYPES, GOE_MAX, GOE_MIN, N_COMPONENTS, PCS_MAX, PCS_MIN, ActionType

N_CONDITIONS = len(ELEMENT_TYPES)


@dataclass(frozen=True)
class HeadConfig:
    channels: int = 32
    hidden: int = 32
    kernel_size: int = 3


def init_head(
    rng: np.random.Generator, dim: int, n_out: int, n_cond: int = 0, config: HeadConfig = HeadConfig()
) -> K.Params:
    F, H = config.channels, config.hidden
    p: K.Params = {}
    p["c0.w"], p["c0.b"] = K.init_conv(rng, config.kernel_size, dim, F)
    p["c1.w"], p["c1.b"] = K.init_conv(rng, config.kernel_size, F, F)
    p["d0.w"], p["d0.b"] = K.init_dense(rng, F + n_cond, H)
    p["d1.w"], p["d1.b"] = K.init_dense(rng, H, n_out)
    p["norm.mean"] = np.zeros(n_out)
    p["norm.std"] = np.ones(n_out)
    return p


def fit_normalisation(params: Mapping[str, np.ndarray], targets: np.ndarray) -> K.Params:
    """Copy of ``params`` whose output standardisation matches ``targets`` (rows = samples)."""
    t = np.asarray(targets, dtype=float).reshape(-1, params["d1.b"].shape[0])
    out = dict(params)
    if t.shape[0] == 0:
        return out
    std = t.std(axis=0)
    out["norm.mean"] = t.mean(axis=0)
    out["norm.std"] = np.where(std > 1e-6, std, 1.0)
    return out


def n_conditions(params: Mapping[str, np.ndarray]) -> int:
    return params["d0.w"].shape[0] - params["c1.w"].shape[2]


def head_forward(
    params: Mapping[str, np.ndarray],
    x: np.ndarray,
    mask: np.ndarray,
    cond: np.ndarray | None = None,
    lo: float = -np.inf,
    hi: float = np.inf,
):
    """``x`` is ``(N, M, D)`` with mask ``(N, M)``; returns clamped ``(N, n_out)`` and a cache."""
    if x.shape[-1] != params["c0.w"].shape[1]:
        raise DimensionError(f"head expects embedding dimension {params['c0.w'].shape[1]}, got {x.shape[-1]}")
    n_cond = n_conditions(params)
    m = np.asarray(mask, dtype=float)
    mm = m[..., None]
    xm = x * mm
    a0 = K.conv1d(xm, params["c0.w"], params["c0.b"])
    h0 = K.relu(a0) * mm
    a1 = K.conv1d(h0, params["c1.w"], params["c1.b"])
    h1 = K.relu(a1) * mm
    pooled = K.masked_mean_pool(h1, m)
    if n_cond:
        if cond is None or cond.shape != (x.shape[0], n_cond):
            raise DimensionError(f"head expects a ({x.shape[0]}, {n_cond}) condition matrix")
        z = np.concatenate([pooled, cond], axis=-1)
    else:
        z = pooled
    a2 = K.dense(z, params["d0.w"], params["d0.b"])
    h2 = K.relu(a2)
    raw = K.dense(h2, params["d1.w"], params["d1.b"])
    y = params["norm.mean"] + params["norm.std"] * raw
    return K.clamp(y, lo, hi), (xm, m, a0, h0, a1, z, a2, h2, y, lo, hi)


def head_backward(params: Mapping[str, np.ndarray], dout: np.ndarray, cache) -> K.Params:
    xm, m, a0, h0, a1, z, a2, h2, y, lo, hi = cache
    mm = m[..., None]
    g: K.Params = {}
    draw = K.clamp_backward(dout, y, lo, hi) * params["norm.std"]
    dh2, g["d1.w"], g["d1.b"] = K.dense_backward(draw, h2, params["d1.w"])
    da2 = K.relu_backward(dh2, a2)
    dz, g["d0.w"], g["d0.b"] = K.dense_backward(da2, z, params["d0.w"])
    F = params["c1.w"].shape[2]
    dh1 = K.masked_mean_pool_backward(dz[..., :F], m)
    da1 = K.relu_backward(dh1 * mm, a1)
    dh0, g["c1.w"], g["c1.b"] = K.conv1d_backward(da1, h0, params["c1.w"])
    da0 = K.relu_backward(dh0 * mm, a0)
    _, g["c0.w"], g["c0.b"] = K.conv1d_backward(da0, xm, params["c0.w"])
    return g


def one_hot_actions(actions) -> np.ndarray:
    out = np.zeros((len(actions), N_CONDITIONS))
    for i, a in enumerate(actions):
        a = ActionType(a)
        if a is ActionType.Transition:
            raise ValueError("Transition cannot condition the GOE head")
        out[i, ELEMENT_TYPES.index(a)] = 1.0
    return out


def block_mask(lengths, max_windows: int) -> np.ndarray:
    lengths = np.asarray(lengths).reshape(-1)
    return (np.arange(max_windows)[None, :] < lengths[:, None]).astype(float)


def predict_goe_batch(
    params: Mapping[str, np.ndarray],
    blocks: np.ndarray,
    lengths,
    actions,
    lo: float = GOE_MIN,
    hi: float = GOE_MAX,
) -> np.ndarray:
    if len(blocks) == 0:
        return np.zeros(0)
    out, _ = head_forward(params, blocks, block_mask(lengths, blocks.shape[1]), one_hot_actions(actions), lo, hi)
    return out[:, 0]


def predict_goe(
    block: np.ndarray, action: ActionType, params: Mapping[str, np.ndarray], length: int | None = None
) -> float:
    """GOE for one padded element block; ``length`` defaults to the full block."""
    block = np.asarray(block, dtype=float)
    if block.ndim != 2:
        raise DimensionError(f"element block must be M x D, got {block.shape}")
    n = block.shape[0] if length is None else length
    return float(predict_goe_batch(params, block[None], [n], [action])[0])


def predict_pcs_batch(params: Mapping[str, np.ndarray], x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out, _ = head_forward(params, x, mask, None, PCS_MIN, PCS_MAX)
    return out


def predict_pcs(embeddings: EmbeddingSequence, params: Mapping[str, np.ndarray]) -> np.ndarray:
    """Five unfactored component scores, pooled over valid windows only."""
    out = predict_pcs_batch(params, embeddings.windows[None], embeddings.mask[None])
    if out.shape[1] != N_COMPONENTS:
        raise DimensionError(f"PCS head has {out.shape[1]} outputs, expected {N_COMPONENTS}")
    return out[0]


def training_targets(record: PerformanceRecord) -> tuple[np.ndarray, np.ndarray]:
    """``(per-element GOE in sheet order, unfactored PCS components)``."""
    truth = record.sheet.truth
    if truth is None:
        raise ValueError(f"record {record.id!r} has no ground truth")
    return np.asarray(truth.goe, dtype=float), np.asarray(truth.pcs, dtype=float)
