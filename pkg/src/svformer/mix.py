"""Token-mask generation, clip/label mixing, and pixel-level baselines.

Masks live on the token grid (t, h, w); mixing is realized at pixel
level by broadcasting each mask bit over its patch block, which is
exactly token-level mixing for non-overlapping patch tokenizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK_STRATEGIES = ("tube", "rand", "frame")
PIXEL_BASELINES = ("mixup", "cutmix")


def round_half_up(x: float) -> int:
    """Deterministic rounding used for all mask cardinalities."""
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class TokenMask:
    """Binary mask over the (t, h, w) token grid.

    `nominal_lambda` is the requested mix ratio; `realized_lambda` is
    the actual ones-fraction after rounding, and is what label mixing
    should use.
    """

    h: int
    w: int
    t: int
    bits: np.ndarray
    nominal_lambda: float

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.shape != (self.t, self.h, self.w):
            raise ValueError(f"bits must have shape {(self.t, self.h, self.w)}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("bits must be 0/1")
        object.__setattr__(self, "bits", bits)

    @property
    def realized_lambda(self) -> float:
        return float(self.bits.sum()) / (self.t * self.h * self.w)


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) draw for the mix ratio."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def gen_mask(strategy: str, h: int, w: int, t: int, lam: float,
             rng: np.random.Generator) -> TokenMask:
    """Draw a token mask with ones-fraction close to `lam`.

    tube: round(lam*h*w) spatial sites, the same in every frame.
    rand: round(lam*h*w*t) tokens anywhere in the grid.
    frame: round(lam*t) whole frames.
    """
    if h < 1 or w < 1 or t < 1:
        raise ValueError("mask dims must be >= 1")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    bits = np.zeros((t, h, w), dtype=np.uint8)
    if strategy == "tube":
        n = round_half_up(lam * h * w)
        sites = rng.choice(h * w, size=n, replace=False)
        plane = np.zeros(h * w, dtype=np.uint8)
        plane[sites] = 1
        bits[:] = plane.reshape(h, w)
    elif strategy == "rand":
        n = round_half_up(lam * h * w * t)
        cells = rng.choice(t * h * w, size=n, replace=False)
        bits.reshape(-1)[cells] = 1
    elif strategy == "frame":
        n = round_half_up(lam * t)
        frames = rng.choice(t, size=n, replace=False)
        bits[frames] = 1
    else:
        raise ValueError(f"unknown mask strategy {strategy!r}")
    return TokenMask(h=h, w=w, t=t, bits=bits, nominal_lambda=float(lam))


def mask_to_pixels(mask: TokenMask, patch: int, channels: int) -> np.ndarray:
    """Broadcast mask bits to pixel space: (t, h*patch, w*patch, channels)."""
    bits = mask.bits.astype(np.float32)
    px = np.repeat(np.repeat(bits, patch, axis=1), patch, axis=2)
    return np.broadcast_to(px[..., None], px.shape + (channels,))


def mix_clips(xa: np.ndarray, xb: np.ndarray, mask: TokenMask,
              patch: int) -> np.ndarray:
    """Pixelwise select xa where the token bit is 1, else xb."""
    xa = np.asarray(xa)
    xb = np.asarray(xb)
    if xa.shape != xb.shape or xa.ndim != 4:
        raise ValueError("clips must share a (T, H, W, C) shape")
    t, h, w, c = xa.shape
    if (mask.t, mask.h * patch, mask.w * patch) != (t, h, w):
        raise ValueError(
            f"mask grid {(mask.t, mask.h, mask.w)} x patch {patch} does not "
            f"tile clip shape {(t, h, w)}")
    m = mask_to_pixels(mask, patch, c)
    return (xa * m + xb * (1.0 - m)).astype(xa.dtype)


def mix_labels(za, zb, lam_eff: float) -> np.ndarray:
    """Convex combination lam*za + (1-lam)*zb of probability vectors."""
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    if za.shape != zb.shape:
        raise ValueError("label vectors must share a shape")
    for name, z in (("za", za), ("zb", zb)):
        if not np.allclose(z.sum(axis=-1), 1.0, atol=1e-6):
            raise ValueError(f"{name} rows must sum to 1")
        if (z < 0).any():
            raise ValueError(f"{name} must be non-negative")
    return lam_eff * za + (1.0 - lam_eff) * zb


def pixel_mix_baseline(strategy: str, xa: np.ndarray, xb: np.ndarray,
                       lam: float, rng: np.random.Generator):
    """Pixel-level mixing baselines; returns (clip, lam_eff).

    mixup blends whole clips (lam_eff = lam).  cutmix pastes one random
    rectangle of xb with target area (1-lam)*H*W, the same rectangle in
    every frame; lam_eff is 1 minus the realized replaced fraction.
    """
    xa = np.asarray(xa)
    xb = np.asarray(xb)
    if xa.shape != xb.shape or xa.ndim != 4:
        raise ValueError("clips must share a (T, H, W, C) shape")
    if strategy == "mixup":
        out = lam * xa + (1.0 - lam) * xb
        return out.astype(xa.dtype), float(lam)
    if strategy == "cutmix":
        t, h, w, c = xa.shape
        frac = np.sqrt(max(0.0, 1.0 - lam))
        ph = round_half_up(frac * h)
        pw = round_half_up(frac * w)
        out = xa.copy()
        if ph and pw:
            y0 = int(rng.integers(0, h - ph + 1))
            x0 = int(rng.integers(0, w - pw + 1))
            out[:, y0:y0 + ph, x0:x0 + pw] = xb[:, y0:y0 + ph, x0:x0 + pw]
        lam_eff = 1.0 - (ph * pw) / (h * w)
        return out, float(lam_eff)
    raise ValueError(f"unknown pixel baseline {strategy!r}")
