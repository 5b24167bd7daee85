"""Neural building blocks on top of the autodiff tape.

Parameter initialization, the affine/attention/GRU/conv primitives the policy
and goal predictor are assembled from, finite-difference gradient checking,
an AdamW-style optimizer, and the text-manifest + binary-blob checkpoint
format.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


class ParameterStore:
    """Named trainable tensors with seeded initialization.

    Parameters are registered in creation order from a single generator, so a
    fixed seed reproduces every value bit for bit.
    """

    def __init__(self, seed: int, dtype=np.float64):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], fan_in: int | None = None,
            zero: bool = False) -> Tensor:
        """Register a parameter. Kaiming-style uniform over fan-in unless zero."""
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        if zero:
            data = np.zeros(shape, dtype=self.dtype)
        else:
            if fan_in is None:
                fan_in = shape[0] if len(shape) > 1 else shape[0]
            bound = float(np.sqrt(3.0 / max(1, fan_in)))
            data = self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params.keys())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def validate_finite(self) -> None:
        for name, t in self.params.items():
            if not np.all(np.isfinite(t.data)):
                raise ValueError(f"parameter {name} contains non-finite values")

    def astype(self, dtype) -> "ParameterStore":
        """Copy of the store with values cast to dtype (same names, same seed tag)."""
        out = ParameterStore.__new__(ParameterStore)
        out.seed = self.seed
        out.dtype = np.dtype(dtype)
        out.rng = np.random.default_rng(self.seed)
        out.params = {k: Tensor(v.data.astype(dtype), requires_grad=True)
                      for k, v in self.params.items()}
        return out


# -- primitives ---------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b). Shapes are checked up front so errors name both sides."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: inner dims disagree, x{x.shape} vs w{w.shape}")
    y = ad.matmul(x, w)
    if b is not None:
        y = ad.add(y, b)
    return y


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax: axis {axis} invalid for shape {x.shape}")
    return ad.softmax(x, axis)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product multi-head attention on already-projected inputs.

    q: (Tq, D), k: (Tk, D), v: (Tk, D); D must divide by heads. Head h attends
    over its own D/heads slice and the heads are re-concatenated.
    """
    tq, d = q.shape
    tk, dk = k.shape
    if d != dk or v.shape != (tk, d):
        raise ValueError(f"attention: incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    if d % heads != 0:
        raise ValueError(f"attention: model dim {d} not divisible by {heads} heads")
    dh = d // heads
    qh = ad.transpose(ad.reshape(q, (tq, heads, dh)), (1, 0, 2))   # (h, Tq, dh)
    kh = ad.transpose(ad.reshape(k, (tk, heads, dh)), (1, 2, 0))   # (h, dh, Tk)
    vh = ad.transpose(ad.reshape(v, (tk, heads, dh)), (1, 0, 2))   # (h, Tk, dh)
    scores = ad.mul(ad.matmul(qh, kh), 1.0 / math.sqrt(dh))          # (h, Tq, Tk)
    w = ad.softmax(scores, axis=-1)
    out = ad.matmul(w, vh)                                         # (h, Tq, dh)
    return ad.reshape(ad.transpose(out, (1, 0, 2)), (tq, d))


@dataclass
class GruParams:
    """Fused GRU weights: w_ih (Din, 3H), w_hh (H, 3H), b_ih, b_hh (3H,).

    Gate order along the 3H axis is (reset, update, candidate). Convention:
    the update gate z interpolates toward the candidate,

        h_t = (1 - z) * h_prev + z * n,

    so a saturated-positive update bias gives h_t ~= n and a
    saturated-negative one gives h_t ~= h_prev.
    """
    w_ih: Tensor
    w_hh: Tensor
    b_ih: Tensor
    b_hh: Tensor


def make_gru_params(store: ParameterStore, prefix: str, din: int, hidden: int) -> GruParams:
    return GruParams(
        w_ih=store.add(f"{prefix}.w_ih", (din, 3 * hidden), fan_in=din),
        w_hh=store.add(f"{prefix}.w_hh", (hidden, 3 * hidden), fan_in=hidden),
        b_ih=store.add(f"{prefix}.b_ih", (3 * hidden,), zero=True),
        b_hh=store.add(f"{prefix}.b_hh", (3 * hidden,), zero=True),
    )


def gru_cell(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU step for a batch: x (B, Din), h_prev (B, H) -> h (B, H).

    Fused into a single tape node (the cell sits inside the training hot
    loop); the backward applies the standard gate derivatives by hand.
    """
    hidden = h_prev.shape[-1]
    if p.w_ih.shape[0] != x.shape[-1] or p.w_hh.shape[0] != hidden:
        raise ValueError(f"gru_cell: x{x.shape} h{h_prev.shape} vs "
                         f"w_ih{p.w_ih.shape} w_hh{p.w_hh.shape}")
    xv, hv = x.data, h_prev.data
    gi = xv @ p.w_ih.data + p.b_ih.data
    gh = hv @ p.w_hh.data + p.b_hh.data
    s = slice(None, hidden), slice(hidden, 2 * hidden), slice(2 * hidden, None)
    r = 1.0 / (1.0 + np.exp(-(gi[:, s[0]] + gh[:, s[0]])))
    z = 1.0 / (1.0 + np.exp(-(gi[:, s[1]] + gh[:, s[1]])))
    n = np.tanh(gi[:, s[2]] + r * gh[:, s[2]])
    out = (1.0 - z) * hv + z * n

    def backward(g):
        dz = g * (n - hv)
        dn_pre = (g * z) * (1.0 - n * n)
        dr = dn_pre * gh[:, s[2]]
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        dx = dgi @ p.w_ih.data.T
        dh = g * (1.0 - z) + dgh @ p.w_hh.data.T
        dwih = xv.T @ dgi
        dwhh = hv.T @ dgh
        return dx, dh, dwih, dwhh, dgi.sum(axis=0), dgh.sum(axis=0)

    return ad._node(out, (x, h_prev, p.w_ih, p.w_hh, p.b_ih, p.b_hh), backward)


@dataclass
class ConvSpec:
    """One conv layer: kernel (kh, kw), stride (sy, sx), padding (py, px), out channels."""
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (2, 2)
    padding: tuple[int, int] = (1, 1)


@dataclass
class EncoderConfig:
    """Input geometry plus the conv stack and the width of the output feature.

    normalize adds a learned layer norm on the output feature so encoder
    features share a scale with the small raw inputs (goal estimate, pose)
    they are concatenated with downstream.
    """
    in_shape: tuple[int, int, int]            # (C, H, W)
    layers: list[ConvSpec] = field(default_factory=list)
    feature_dim: int = 128
    normalize: bool = True

    def flat_size(self) -> int:
        c, h, w = self.in_shape
        for spec in self.layers:
            h = (h + 2 * spec.padding[0] - spec.kernel[0]) // spec.stride[0] + 1
            w = (w + 2 * spec.padding[1] - spec.kernel[1]) // spec.stride[1] + 1
            c = spec.out_channels
        return c * h * w


def make_encoder_params(store: ParameterStore, prefix: str, cfg: EncoderConfig) -> None:
    cin = cfg.in_shape[0]
    for i, spec in enumerate(cfg.layers):
        fan = cin * spec.kernel[0] * spec.kernel[1]
        store.add(f"{prefix}.conv{i}.w", (spec.out_channels, cin, *spec.kernel), fan_in=fan)
        store.add(f"{prefix}.conv{i}.b", (spec.out_channels,), zero=True)
        cin = spec.out_channels
    store.add(f"{prefix}.out.w", (cfg.flat_size(), cfg.feature_dim), fan_in=cfg.flat_size())
    store.add(f"{prefix}.out.b", (cfg.feature_dim,), zero=True)
    if cfg.normalize:
        g = store.add(f"{prefix}.ln.g", (cfg.feature_dim,), zero=True)
        g.data[:] = 1.0
        store.add(f"{prefix}.ln.b", (cfg.feature_dim,), zero=True)


def conv_encoder(x: Tensor, store: ParameterStore, prefix: str, cfg: EncoderConfig) -> Tensor:
    """Conv stack with ReLU after each layer, flattened into a linear feature
    head (layer-normalized when the config says so).

    x: (B, C, H, W) matching cfg.in_shape -> (B, feature_dim).
    """
    if tuple(x.shape[1:]) != tuple(cfg.in_shape):
        raise ValueError(f"conv_encoder: input {x.shape[1:]} != configured {cfg.in_shape}")
    h = x
    for i, spec in enumerate(cfg.layers):
        h = ad.conv2d(h, store[f"{prefix}.conv{i}.w"], store[f"{prefix}.conv{i}.b"],
                      spec.stride, spec.padding)
        h = ad.relu(h)
    flat = ad.reshape(h, (x.shape[0], cfg.flat_size()))
    out = linear(flat, store[f"{prefix}.out.w"], store[f"{prefix}.out.b"])
    if cfg.normalize:
        out = ad.layer_norm(out, store[f"{prefix}.ln.g"], store[f"{prefix}.ln.b"])
    return out


# -- gradient checking ----------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_checked: int
    passed: bool

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"grad_check {state}: max rel err {self.max_rel_error:.3e} "
                f"at {self.worst_param} over {self.n_checked} coordinates")


def grad_check(f, params: dict[str, Tensor], tolerance: float = 1e-5,
               step: float = 1e-5, max_coords_per_tensor: int = 200,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f() against central differences.

    All coordinates are checked for small tensors; larger ones are subsampled.
    Relative error is |ad - fd| / max(|ad|, |fd|, 1).
    """
    rng = rng or np.random.default_rng(0)
    for t in params.values():
        t.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued computation")
    if not np.isfinite(out.item()):
        raise FloatingPointError("grad_check: non-finite forward value")
    out.backward()

    worst = 0.0
    worst_name = "-"
    n_checked = 0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if n <= max_coords_per_tensor:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        gad = np.zeros(t.data.shape).reshape(-1) if t.grad is None else t.grad.reshape(-1)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + step
            with ad.no_grad():
                fp = f().item()
            flat[c] = keep - step
            with ad.no_grad():
                fm = f().item()
            flat[c] = keep
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"grad_check: non-finite perturbation at {name}[{c}]")
            fd = (fp - fm) / (2 * step)
            rel = abs(gad[c] - fd) / max(abs(gad[c]), abs(fd), 1.0)
            n_checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{name}[{c}]"
    return GradCheckReport(worst, worst_name, n_checked, worst < tolerance)


# -- optimizer -------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay; biases/gains (1-D tensors) skip decay."""

    def __init__(self, store: ParameterStore, lr: float = 1e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in store.params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.store.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if p.data.ndim > 1 and self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * upd

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.store.params:
            out[f"{name}.adam_m"] = self.m[name]
            out[f"{name}.adam_v"] = self.v[name]
        return out

    def load_state_tensors(self, blobs: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.store.params:
            self.m[name] = blobs[f"{name}.adam_m"].copy()
            self.v[name] = blobs[f"{name}.adam_v"].copy()


def global_grad_norm_clip(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in store.params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in store.params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path: str | Path, store: ParameterStore,
                    extra_tensors: dict[str, np.ndarray] | None = None,
                    meta: dict[str, str] | None = None) -> None:
    """Write <path>.manifest (text) and <path>.bin (little-endian values).

    The manifest lists every tensor in blob order with shape and dtype, plus
    the init seed, a format version, free-form metadata, and a sha256 of the
    blob for corruption detection.
    """
    path = Path(path)
    entries: list[tuple[str, np.ndarray]] = [(k, v.data) for k, v in store.params.items()]
    for k, v in (extra_tensors or {}).items():
        entries.append((k, v))
    blob = bytearray()
    lines = [f"version {CHECKPOINT_VERSION}", f"seed {store.seed}"]
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {v}")
    for name, arr in entries:
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob.extend(le.tobytes())
        shape = ",".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        lines.append(f"tensor {name} {shape} {arr.dtype.name}")
    digest = hashlib.sha256(bytes(blob)).hexdigest()
    lines.append(f"sha256 {digest}")
    path.with_suffix(".manifest").write_text("\n".join(lines) + "\n")
    path.with_suffix(".bin").write_bytes(bytes(blob))


class CheckpointError(Exception):
    pass


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str], int]:
    """Return (tensors, meta, seed). Raises CheckpointError on hash mismatch."""
    path = Path(path)
    manifest = path.with_suffix(".manifest").read_text().splitlines()
    blob = path.with_suffix(".bin").read_bytes()
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    seed = 0
    offset = 0
    expected_hash = None
    for line in manifest:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "seed":
            seed = int(parts[1])
        elif parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "sha256":
            expected_hash = parts[1]
        elif parts[0] == "tensor":
            name, shape_s, dtype_s = parts[1], parts[2], parts[3]
            shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split(","))
            dt = np.dtype(dtype_s).newbyteorder("<")
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * dt.itemsize
            arr = np.frombuffer(blob[offset:offset + nbytes], dtype=dt).reshape(shape)
            tensors[name] = arr.astype(np.dtype(dtype_s))
            offset += nbytes
    if expected_hash is not None:
        actual = hashlib.sha256(blob).hexdigest()
        if actual != expected_hash:
            raise CheckpointError(f"checkpoint blob hash mismatch for {path}")
    return tensors, meta, seed


def restore_store(path: str | Path, store: ParameterStore) -> dict[str, np.ndarray]:
    """Load tensors into an existing store (shapes must match); returns extras."""
    tensors, _, _ = load_checkpoint(path)
    extras = {}
    for name, arr in tensors.items():
        if name in store.params:
            if store.params[name].data.shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arr.shape} "
                    f"vs model {store.params[name].data.shape}")
            store.params[name].data = arr.astype(store.dtype)
        else:
            extras[name] = arr
    return extras
