"""Video transformer with divided space-time attention.

Clips are patch-embedded per frame, a class token is prepended, and each
block runs temporal attention (same spatial site attending across
frames, class token skipped), then spatial attention (within each frame,
class token prepended per frame and the per-frame class outputs
averaged), then an MLP.  All sublayers are pre-norm residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ParamSet,
    Tensor,
    concat,
    dropout,
    gelu,
    layer_norm,
    no_grad,
    softmax,
)


@dataclass(frozen=True)
class ModelConfig:
    t: int = 8
    h: int = 16
    w: int = 16
    c: int = 1
    patch: int = 4
    dim: int = 32
    heads: int = 2
    blocks: int = 2
    n_classes: int = 8
    drop_rate: float = 0.1

    def __post_init__(self):
        if self.h % self.patch or self.w % self.patch:
            raise ValueError(
                f"frame size {self.h}x{self.w} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        for name in ("t", "h", "w", "c", "patch", "dim", "heads", "blocks", "n_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError(f"drop_rate must be in [0, 1), got {self.drop_rate}")

    @property
    def grid_h(self) -> int:
        return self.h // self.patch

    @property
    def grid_w(self) -> int:
        return self.w // self.patch

    @property
    def n_sites(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def n_tokens(self) -> int:
        return 1 + self.t * self.n_sites


# Two stock sizes: the small one is the default everywhere.
S_TOY = ModelConfig()
B_TOY = ModelConfig(dim=64, heads=4, blocks=4)


@dataclass
class Model:
    config: ModelConfig
    params: ParamSet = field(repr=False)

    def n_params(self) -> int:
        return self.params.n_elements()


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) with draws outside 2 sigma redrawn."""
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) > 2.0
        n_bad = int(bad.sum())
        if not n_bad:
            break
        x[bad] = rng.standard_normal(n_bad)
    return (x * std).astype(dtype)


def init_model(config: ModelConfig, seed, dtype=np.float32) -> Model:
    """Build parameters in a fixed order from a seeded generator.

    The insertion order here is load-bearing: it defines checkpoint
    layout and the draw order that makes init reproducible per seed.
    """
    rng = np.random.default_rng(seed)
    p = ParamSet()
    d = config.dim
    std = 0.02

    def w(name, shape):
        p.add(name, _trunc_normal(rng, shape, std, dtype))

    def zeros(name, shape):
        p.add(name, np.zeros(shape, dtype=dtype))

    def ones(name, shape):
        p.add(name, np.ones(shape, dtype=dtype))

    patch_in = config.patch * config.patch * config.c
    w("patch.w", (patch_in, d))
    zeros("patch.b", (d,))
    w("cls", (d,))
    # row 0 is the class-token slot; rows 1.. are the spatial sites
    w("pos.spatial", (1 + config.n_sites, d))
    w("pos.temporal", (config.t, d))

    for i in range(config.blocks):
        pre = f"blocks.{i}"
        for sub in ("tattn", "sattn"):
            ones(f"{pre}.{sub}.norm.g", (d,))
            zeros(f"{pre}.{sub}.norm.b", (d,))
            for mat in ("wq", "wk", "wv", "wo"):
                w(f"{pre}.{sub}.{mat}", (d, d))
            for b in ("bq", "bk", "bv", "bo"):
                zeros(f"{pre}.{sub}.{b}", (d,))
        ones(f"{pre}.mlp.norm.g", (d,))
        zeros(f"{pre}.mlp.norm.b", (d,))
        w(f"{pre}.mlp.w1", (d, 4 * d))
        zeros(f"{pre}.mlp.b1", (4 * d,))
        w(f"{pre}.mlp.w2", (4 * d, d))
        zeros(f"{pre}.mlp.b2", (d,))

    ones("head.norm.g", (d,))
    zeros("head.norm.b", (d,))
    # zero head: a fresh model predicts the uniform distribution
    zeros("head.w", (d, config.n_classes))
    zeros("head.b", (config.n_classes,))
    return Model(config=config, params=p)


def _attend(x: Tensor, p: ParamSet, pre: str, heads: int) -> Tensor:
    """Multi-head self-attention over axis 1 of a (B, N, D) tensor.

    q/k/v weights are separate parameters but are concatenated here so
    the three projections run as one matmul.
    """
    b, n, d = x.shape
    hd = d // heads
    scale = 1.0 / math.sqrt(hd)

    wqkv = concat([p[f"{pre}.wq"], p[f"{pre}.wk"], p[f"{pre}.wv"]], axis=1)
    bqkv = concat([p[f"{pre}.bq"], p[f"{pre}.bk"], p[f"{pre}.bv"]], axis=0)
    qkv = (x @ wqkv + bqkv).reshape(b, n, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    att = softmax(q @ k.transpose(0, 1, 3, 2) * scale, axis=-1)
    y = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    return y @ p[f"{pre}.wo"] + p[f"{pre}.bo"]


def tokenize(model: Model, clips) -> Tensor:
    """Patch tokens (B, T*S, dim) with positional embeddings added.

    Each token is the linear projection of one non-overlapping
    patch x patch x C pixel block, plus its site's spatial embedding and
    its frame's temporal embedding.  The class token is not included.
    """
    cfg = model.config
    p = model.params
    clips = np.asarray(clips)
    if clips.ndim != 5 or clips.shape[1:] != (cfg.t, cfg.h, cfg.w, cfg.c):
        raise ValueError(
            f"expected clips (B, {cfg.t}, {cfg.h}, {cfg.w}, {cfg.c}), got {clips.shape}")
    clips = clips.astype(p["patch.w"].dtype, copy=False)
    b = clips.shape[0]
    gh, gw, pc = cfg.grid_h, cfg.grid_w, cfg.patch
    x = Tensor(clips)
    x = x.reshape(b, cfg.t, gh, pc, gw, pc, cfg.c)
    x = x.transpose(0, 1, 2, 4, 3, 5, 6)
    x = x.reshape(b, cfg.t * cfg.n_sites, pc * pc * cfg.c)
    tok = x @ p["patch.w"] + p["patch.b"]

    s, d = cfg.n_sites, cfg.dim
    pos_s = p["pos.spatial"][1:].reshape(1, s, d).broadcast_to((cfg.t, s, d))
    pos_t = p["pos.temporal"].reshape(cfg.t, 1, d).broadcast_to((cfg.t, s, d))
    return tok + (pos_s + pos_t).reshape(cfg.t * s, d)


def forward_tokens(model: Model, clips, train_mode: bool = False,
                   rng: np.random.Generator | None = None,
                   skip_spatial: bool = False,
                   skip_mlp: bool = False) -> Tensor:
    """Token states (B, 1+T*S, dim) after all blocks.

    `skip_spatial` / `skip_mlp` replace those sublayers with identity;
    they exist so tests can isolate the temporal-attention path.
    """
    cfg = model.config
    p = model.params
    drop_rate = cfg.drop_rate if train_mode else 0.0
    if drop_rate > 0.0 and rng is None:
        raise ValueError("train_mode forward with dropout needs an rng")

    def drop(t):
        return dropout(t, drop_rate, rng) if drop_rate > 0.0 else t

    tok = tokenize(model, clips)
    b = tok.shape[0]
    t, s, d = cfg.t, cfg.n_sites, cfg.dim
    cls = (p["cls"] + p["pos.spatial"][0]).reshape(1, 1, d).broadcast_to((b, 1, d))
    z = concat([cls, tok], axis=1)

    for i in range(cfg.blocks):
        pre = f"blocks.{i}"

        # temporal attention: site-aligned tokens attend across frames;
        # the class token skips this sublayer
        ln = layer_norm(z, p[f"{pre}.tattn.norm.g"], p[f"{pre}.tattn.norm.b"])
        xt = ln[:, 1:].reshape(b, t, s, d).transpose(0, 2, 1, 3).reshape(b * s, t, d)
        yt = _attend(xt, p, f"{pre}.tattn", cfg.heads)
        yt = yt.reshape(b, s, t, d).transpose(0, 2, 1, 3).reshape(b, t * s, d)
        z = concat([z[:, :1], z[:, 1:] + drop(yt)], axis=1)

        if not skip_spatial:
            # spatial attention: per-frame tokens plus a shared class
            # token; the T class outputs are averaged before the residual
            ln = layer_norm(z, p[f"{pre}.sattn.norm.g"], p[f"{pre}.sattn.norm.b"])
            cls_rep = (ln[:, :1].reshape(b, 1, 1, d)
                       .broadcast_to((b, t, 1, d)).reshape(b * t, 1, d))
            frames = ln[:, 1:].reshape(b * t, s, d)
            ys = _attend(concat([cls_rep, frames], axis=1), p, f"{pre}.sattn", cfg.heads)
            cls_out = ys[:, :1].reshape(b, t, d).mean(axis=1).reshape(b, 1, d)
            pat_out = ys[:, 1:].reshape(b, t * s, d)
            z = z + drop(concat([cls_out, pat_out], axis=1))

        if not skip_mlp:
            ln = layer_norm(z, p[f"{pre}.mlp.norm.g"], p[f"{pre}.mlp.norm.b"])
            hid = gelu(ln @ p[f"{pre}.mlp.w1"] + p[f"{pre}.mlp.b1"])
            z = z + drop(hid @ p[f"{pre}.mlp.w2"] + p[f"{pre}.mlp.b2"])

    return z


def forward(model: Model, clips, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Logits (B, n_classes) for float clips shaped (B, T, H, W, C).

    `train_mode` enables dropout, which then needs `rng`; eval mode
    draws nothing.  Inputs are cast to the parameter dtype.
    """
    z = forward_tokens(model, clips, train_mode=train_mode, rng=rng)
    p = model.params
    cls_final = layer_norm(z[:, 0], p["head.norm.g"], p["head.norm.b"])
    return cls_final @ p["head.w"] + p["head.b"]


def predict_probs(model: Model, clips, batch_size: int = 64) -> np.ndarray:
    """Eval-mode softmax probabilities, batched, graph-free."""
    clips = np.asarray(clips)
    out = []
    with no_grad():
        for lo in range(0, clips.shape[0], batch_size):
            logits = forward(model, clips[lo:lo + batch_size])
            out.append(softmax(logits, axis=-1).data)
    return np.concatenate(out, axis=0)
