"""Dual-map goal prediction.

The sketch descriptor gets a learnable goal embedding added to the keypoint
column nearest the annotated goal; both descriptor sets are lifted to the
model width, contextualized by a shared self-attention block, fused by a
cross-attention block with the exploration map as queries, and scored by a
small MLP. The softmax scores weight the exploration keypoint coordinates
into the predicted goal, which therefore always lies in the lattice's convex
hull.

Attention blocks are post-norm residual: y = LN(x + proj(attn)). The lift is
applied before the first attention layer, and the self-attention parameters
are shared between the two maps.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .raydesc import RayDescriptorSet


@dataclass(frozen=True)
class GoalPredictorConfig:
    n_rays: int = 8
    d_model: int = 64
    heads: int = 4

    @property
    def row_dim(self) -> int:
        return self.n_rays + 2


@dataclass
class GoalPrediction:
    weights: np.ndarray         # (M,) simplex
    goal: np.ndarray            # (2,) normalized raster coordinates
    coords: np.ndarray          # (M, 2) exploration keypoint coordinates used


def nearest_keypoint(goal: tuple[float, float], coords: np.ndarray) -> int:
    """Index of the keypoint closest to the goal; row-major order breaks ties."""
    if len(coords) == 0:
        raise ValueError("no keypoints")
    d2 = (coords[:, 0] - goal[0]) ** 2 + (coords[:, 1] - goal[1]) ** 2
    return int(np.argmin(d2))   # argmin returns the first (smallest) index on ties


def inject_goal(desc: RayDescriptorSet, i_star: int, e_g: np.ndarray) -> RayDescriptorSet:
    """Descriptor copy with e_g added to keypoint column i_star."""
    if not (0 <= i_star < desc.m):
        raise ValueError(f"keypoint index {i_star} out of range")
    matrix = desc.matrix.copy()
    matrix[:, i_star] += e_g
    return RayDescriptorSet(matrix=matrix, m1=desc.m1, m2=desc.m2,
                            n_rays=desc.n_rays, source=desc.source)


def make_params(store: nn.ParameterStore, cfg: GoalPredictorConfig,
                prefix: str = "goal") -> None:
    d, r = cfg.d_model, cfg.row_dim
    store.add(f"{prefix}.e_g", (r,), fan_in=r)
    store.add(f"{prefix}.lift.w", (r, d), fan_in=r)
    store.add(f"{prefix}.lift.b", (d,), zero=True)
    for block in ("sa", "ca"):
        for name in ("wq", "wk", "wv", "wo"):
            store.add(f"{prefix}.{block}.{name}", (d, d), fan_in=d)
        store.add(f"{prefix}.{block}.ln.g", (d,), zero=True)
        store[f"{prefix}.{block}.ln.g"].data[:] = 1.0
        store.add(f"{prefix}.{block}.ln.b", (d,), zero=True)
    store.add(f"{prefix}.mlp.w1", (d, d), fan_in=d)
    store.add(f"{prefix}.mlp.b1", (d,), zero=True)
    store.add(f"{prefix}.mlp.w2", (d, 1), fan_in=d)
    store.add(f"{prefix}.mlp.b2", (1,), zero=True)


def _lin3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Linear map over the last axis of a (B, M, D) tensor via 2-D reshape."""
    bsz, m, din = x.shape
    y = nn.linear(ad.reshape(x, (bsz * m, din)), w, b)
    return ad.reshape(y, (bsz, m, w.shape[1]))


def _mha(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Batched multi-head attention: q (B, Tq, D), k/v (B, Tk, D)."""
    bsz, tq, d = q.shape
    tk = k.shape[1]
    dh = d // heads
    qh = ad.transpose(ad.reshape(q, (bsz, tq, heads, dh)), (0, 2, 1, 3))
    kh = ad.transpose(ad.reshape(k, (bsz, tk, heads, dh)), (0, 2, 3, 1))
    vh = ad.transpose(ad.reshape(v, (bsz, tk, heads, dh)), (0, 2, 1, 3))
    scores = ad.mul(ad.matmul(qh, kh), 1.0 / math.sqrt(dh))
    w = ad.softmax(scores, axis=-1)
    out = ad.matmul(w, vh)
    return ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (bsz, tq, d))


def _attn_block(x: Tensor, kv: Tensor, store: nn.ParameterStore, name: str,
                heads: int) -> Tensor:
    q = _lin3(x, store[f"{name}.wq"])
    k = _lin3(kv, store[f"{name}.wk"])
    v = _lin3(kv, store[f"{name}.wv"])
    out = _lin3(_mha(q, k, v, heads), store[f"{name}.wo"])
    return ad.layer_norm(ad.add(x, out), store[f"{name}.ln.g"], store[f"{name}.ln.b"])


def predict_t(rows_s: Tensor, onehot_s: Tensor, rows_e: Tensor, coords_e: Tensor,
              store: nn.ParameterStore, cfg: GoalPredictorConfig,
              prefix: str = "goal") -> tuple[Tensor, Tensor]:
    """Differentiable forward pass.

    rows_s, rows_e: (B, M, N+2) descriptor rows; onehot_s: (B, M, 1) marking
    the goal-nearest sketch keypoint; coords_e: (M, 2). Returns
    (weights (B, M), goal (B, 2)).
    """
    if rows_s.shape != rows_e.shape:
        raise ValueError(f"descriptor shapes differ: {rows_s.shape} vs {rows_e.shape}")
    if rows_s.shape[-1] != cfg.row_dim:
        raise ValueError(f"row dim {rows_s.shape[-1]} != configured {cfg.row_dim}")
    injected = ad.add(rows_s, ad.mul(onehot_s, store[f"{prefix}.e_g"]))
    lift_w, lift_b = store[f"{prefix}.lift.w"], store[f"{prefix}.lift.b"]
    xs = _lin3(injected, lift_w, lift_b)
    xe = _lin3(rows_e, lift_w, lift_b)
    xs = _attn_block(xs, xs, store, f"{prefix}.sa", cfg.heads)
    xe = _attn_block(xe, xe, store, f"{prefix}.sa", cfg.heads)
    fused = _attn_block(xe, xs, store, f"{prefix}.ca", cfg.heads)
    h = ad.relu(_lin3(fused, store[f"{prefix}.mlp.w1"], store[f"{prefix}.mlp.b1"]))
    logits = _lin3(h, store[f"{prefix}.mlp.w2"], store[f"{prefix}.mlp.b2"])
    bsz, m, _ = logits.shape
    weights = ad.softmax(ad.reshape(logits, (bsz, m)), axis=-1)
    goal = ad.matmul(weights, coords_e)
    return weights, goal


def build_inputs(desc_s: RayDescriptorSet, i_star: int, desc_e: RayDescriptorSet,
                 dtype=np.float64):
    """Numpy inputs of predict_t for a single descriptor pair."""
    rows_s = desc_s.keypoint_rows()[None, ...].astype(dtype)
    rows_e = desc_e.keypoint_rows()[None, ...].astype(dtype)
    onehot = np.zeros((1, desc_s.m, 1), dtype=dtype)
    onehot[0, i_star, 0] = 1.0
    coords = desc_e.coords.astype(dtype)
    return rows_s, onehot, rows_e, coords


def predict(desc_s: RayDescriptorSet, i_star: int, desc_e: RayDescriptorSet,
            store: nn.ParameterStore, cfg: GoalPredictorConfig,
            prefix: str = "goal") -> GoalPrediction:
    """Evaluation wrapper: no graph, numpy outputs."""
    if (desc_s.m, desc_s.n_rays) != (desc_e.m, desc_e.n_rays):
        raise ValueError(
            f"descriptor geometry mismatch: sketch (M={desc_s.m}, N={desc_s.n_rays}) "
            f"vs exploration (M={desc_e.m}, N={desc_e.n_rays})")
    rows_s, onehot, rows_e, coords = build_inputs(desc_s, i_star, desc_e,
                                                  dtype=store.dtype)
    with ad.no_grad():
        weights, goal = predict_t(Tensor(rows_s), Tensor(onehot), Tensor(rows_e),
                                  Tensor(coords), store, cfg, prefix)
    return GoalPrediction(weights=weights.data[0].copy(), goal=goal.data[0].copy(),
                          coords=coords.copy())
