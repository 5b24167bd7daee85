"""Recurrent navigation policy.

Depth, exploration raster and sketch raster each pass through a small conv
encoder; the features, the predicted goal, and (because the shared map frame
hides it otherwise) the agent's own pose in that frame are concatenated and
drive a GRU whose hidden state feeds a linear action head and a linear value
head (the critic the PPO update needs).

Rasters enter at the canonical sketch geometry and are mean-pooled to the
encoder's input size; the sketch feature is constant per episode, so callers
cache it via sketch_feature().
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .goalpred import GoalPredictorConfig

N_ACTIONS = 4


@dataclass(frozen=True)
class ModelConfig:
    n_rays: int = 64
    raster_size: int = 128
    enc_size: int = 64              # raster side after pooling
    feat_dim: int = 128
    gru_hidden: int = 512
    m1: int = 9
    m2: int = 9
    n_dirs: int = 8
    d_model: int = 64
    heads: int = 4
    use_goal_predictor: bool = True
    include_pose: bool = True
    stop_bias: float = 0.25      # initial favor on the STOP logit

    @property
    def goal_cfg(self) -> GoalPredictorConfig:
        return GoalPredictorConfig(n_rays=self.n_dirs, d_model=self.d_model,
                                   heads=self.heads)

    @property
    def pool(self) -> int:
        return self.raster_size // self.enc_size

    @property
    def gru_input_dim(self) -> int:
        return 3 * self.feat_dim + 2 + (4 if self.include_pose else 0)

    def depth_encoder(self) -> nn.EncoderConfig:
        return nn.EncoderConfig(
            in_shape=(1, 1, self.n_rays),
            layers=[nn.ConvSpec(8, kernel=(1, 5), stride=(1, 2), padding=(0, 2)),
                    nn.ConvSpec(16, kernel=(1, 5), stride=(1, 2), padding=(0, 2)),
                    nn.ConvSpec(16, kernel=(1, 3), stride=(1, 2), padding=(0, 1))],
            feature_dim=self.feat_dim)

    def raster_encoder(self) -> nn.EncoderConfig:
        s = self.enc_size
        return nn.EncoderConfig(
            in_shape=(1, s, s),
            layers=[nn.ConvSpec(8), nn.ConvSpec(16), nn.ConvSpec(16)],
            feature_dim=self.feat_dim)


@dataclass
class FeatureBundle:
    depth: Tensor               # (B, feat_dim)
    explored: Tensor            # (B, feat_dim)
    sketch: Tensor              # (B, feat_dim)
    goal: Tensor                # (B, 2)
    pose: Tensor | None         # (B, 4) normalized x, y, cos h, sin h


def make_params(store: nn.ParameterStore, cfg: ModelConfig) -> None:
    nn.make_encoder_params(store, "enc.depth", cfg.depth_encoder())
    nn.make_encoder_params(store, "enc.explored", cfg.raster_encoder())
    nn.make_encoder_params(store, "enc.sketch", cfg.raster_encoder())
    nn.make_gru_params(store, "policy.gru", cfg.gru_input_dim, cfg.gru_hidden)
    store.add("policy.action.w", (cfg.gru_hidden, N_ACTIONS), fan_in=cfg.gru_hidden)
    b = store.add("policy.action.b", (N_ACTIONS,), zero=True)
    # STOP starts mildly favored: early training then teaches where stopping
    # pays instead of having to resurrect an action that early value
    # estimates suppress to never-sampled
    b.data[0] = cfg.stop_bias
    store.add("policy.value.w", (cfg.gru_hidden, 1), fan_in=cfg.gru_hidden)
    store.add("policy.value.b", (1,), zero=True)
    if cfg.use_goal_predictor:
        import sketchnav.goalpred as goalpred
        goalpred.make_params(store, cfg.goal_cfg)


def pool_raster(raster: np.ndarray, pool: int) -> np.ndarray:
    """Mean-pool a (H, W) uint8 raster by an integer factor, scaled to [0,1]."""
    h, w = raster.shape
    r = raster[:h - h % pool, :w - w % pool].astype(np.float64) / 255.0
    return r.reshape(h // pool, pool, w // pool, pool).mean(axis=(1, 3))


def prepare_depth(rays: np.ndarray, max_range: float) -> np.ndarray:
    return np.asarray(rays, dtype=np.float64) / max_range


def sketch_feature(sketch_pooled: np.ndarray, store: nn.ParameterStore,
                   cfg: ModelConfig) -> Tensor:
    """Feature of one pooled sketch raster; cache the result per episode."""
    x = Tensor(sketch_pooled[None, None, ...].astype(store.dtype))
    return nn.conv_encoder(x, store, "enc.sketch", cfg.raster_encoder())


def encode(depth: np.ndarray, explored_pooled: np.ndarray, goal: np.ndarray,
           store: nn.ParameterStore, cfg: ModelConfig,
           sketch_feat: Tensor, pose_vec: np.ndarray | None = None) -> FeatureBundle:
    """Feature bundle for a batch.

    depth: (B, n_rays) scaled to [0,1]; explored_pooled: (B, s, s); goal:
    (B, 2); sketch_feat: (B, feat_dim) or (1, feat_dim) tensor (precomputed);
    pose_vec: (B, 4) when the config includes the pose.
    """
    dt = store.dtype
    d = nn.conv_encoder(Tensor(depth[:, None, None, :].astype(dt)),
                        store, "enc.depth", cfg.depth_encoder())
    e = nn.conv_encoder(Tensor(explored_pooled[:, None, :, :].astype(dt)),
                        store, "enc.explored", cfg.raster_encoder())
    pose_t = None
    if cfg.include_pose:
        if pose_vec is None:
            raise ValueError("config includes pose but none was given")
        pose_t = Tensor(pose_vec.astype(dt))
    return FeatureBundle(depth=d, explored=e, sketch=sketch_feat,
                         goal=Tensor(np.asarray(goal, dtype=dt)), pose=pose_t)


def step_policy(state: Tensor, bundle: FeatureBundle, store: nn.ParameterStore,
                cfg: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """(new hidden state, action logits (B,4), value (B,))."""
    if state.shape[-1] != cfg.gru_hidden:
        raise ValueError(f"hidden state width {state.shape[-1]} != {cfg.gru_hidden}")
    if not np.all(np.isfinite(state.data)):
        raise FloatingPointError("non-finite policy state")
    parts = [bundle.depth, bundle.explored, bundle.sketch, bundle.goal]
    if cfg.include_pose:
        parts.append(bundle.pose)
    sketch = parts[2]
    if sketch.shape[0] == 1 and bundle.depth.shape[0] > 1:
        reps = bundle.depth.shape[0]
        parts[2] = ad.concat([sketch] * reps, axis=0)
    x = ad.concat(parts, axis=1)
    gru = nn.GruParams(w_ih=store["policy.gru.w_ih"], w_hh=store["policy.gru.w_hh"],
                       b_ih=store["policy.gru.b_ih"], b_hh=store["policy.gru.b_hh"])
    h = nn.gru_cell(x, state, gru)
    logits = nn.linear(h, store["policy.action.w"], store["policy.action.b"])
    value = ad.reshape(nn.linear(h, store["policy.value.w"], store["policy.value.b"]),
                       (h.shape[0],))
    if not np.all(np.isfinite(logits.data)):
        raise FloatingPointError("non-finite action logits")
    return h, logits, value


def initial_state(batch: int, cfg: ModelConfig, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros((batch, cfg.gru_hidden), dtype=dtype))


SAMPLE = "SAMPLE"
GREEDY = "GREEDY"


def sample_action(logits: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> int:
    """Draw (SAMPLE) or argmax with lowest-index tie-break (GREEDY)."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if logits.shape != (N_ACTIONS,):
        raise ValueError(f"expected {N_ACTIONS} logits, got {logits.shape}")
    if mode == GREEDY:
        return int(np.argmax(logits))
    if mode != SAMPLE:
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("SAMPLE mode needs an rng")
    z = logits - logits.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(N_ACTIONS, p=p))


def pose_vector(x_px: float, y_px: float, heading: float, raster_size: int) -> np.ndarray:
    """Agent pose in the shared raster frame: normalized position + heading."""
    return np.array([x_px / raster_size, y_px / raster_size,
                     math.cos(heading), math.sin(heading)])
