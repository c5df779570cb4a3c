"""Clip augmentations: weak spatial, strong spatial, and temporal warp.

All functions take a (T, H, W, C) float array in [0, 1] and an rng, and
return a new array of the same shape and range.  Draw order inside each
function is fixed and documented so tests can stub the generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_clip(clip) -> np.ndarray:
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise ValueError(f"clip must be (T, H, W, C), got shape {clip.shape}")
    return clip


def resize_bilinear(clip: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize of every frame, half-pixel-center convention.

    Output values are convex combinations of inputs, so the [0, 1]
    range is preserved.  Same-size calls return the input unchanged.
    """
    clip = _check_clip(clip)
    t, h, w, c = clip.shape
    if (new_h, new_w) == (h, w):
        return clip.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(clip.dtype)
        return lo, hi, frac

    ylo, yhi, yf = axis_weights(h, new_h)
    xlo, xhi, xf = axis_weights(w, new_w)
    yf = yf[None, :, None, None]
    xf = xf[None, None, :, None]
    top = clip[:, ylo][:, :, xlo] * (1 - xf) + clip[:, ylo][:, :, xhi] * xf
    bot = clip[:, yhi][:, :, xlo] * (1 - xf) + clip[:, yhi][:, :, xhi] * xf
    return (top * (1 - yf) + bot * yf).astype(clip.dtype)


def weak_augment(clip: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Horizontal flip (p=0.5), scale up to 1.25x, random crop back.

    One flip decision, one scale factor, and one crop offset are drawn
    and applied to every frame.  Draw order: flip, scale, offset_y,
    offset_x (offsets drawn even when the scaled size leaves no slack).
    """
    clip = _check_clip(clip)
    t, h, w, c = clip.shape
    if rng.random() < 0.5:
        clip = clip[:, :, ::-1]
    scale = rng.uniform(1.0, 1.25)
    sh, sw = round(h * scale), round(w * scale)
    scaled = resize_bilinear(clip, sh, sw)
    oy = int(rng.integers(0, sh - h + 1))
    ox = int(rng.integers(0, sw - w + 1))
    return np.ascontiguousarray(scaled[:, oy:oy + h, ox:ox + w])


STRONG_OPS = ("brightness", "contrast", "noise", "dropout", "cutout")


def strong_spatial_augment(clip: np.ndarray, rng: np.random.Generator,
                           pool=STRONG_OPS) -> np.ndarray:
    """Two photometric/occlusion ops with shared parameters across frames.

    Two distinct ops are chosen from `pool` (order as drawn), each with
    one parameter draw applied identically to every frame; the result is
    clamped to [0, 1].  Per-op draws: brightness shift U(-0.3, 0.3);
    contrast factor U(0.5, 1.5) about mid-gray; one Gaussian noise field
    with sigma U(0, 0.1); one dropout mask with rate U(0, 0.2); one
    cutout rectangle with side fractions U(0.1, 0.5) each (area <= 25%).
    """
    clip = _check_clip(clip)
    t, h, w, c = clip.shape
    n_ops = min(2, len(pool))
    chosen = rng.choice(len(pool), size=n_ops, replace=False)
    out = clip.astype(np.float32, copy=True)
    for idx in chosen:
        op = pool[int(idx)]
        if op == "brightness":
            out += rng.uniform(-0.3, 0.3)
        elif op == "contrast":
            factor = rng.uniform(0.5, 1.5)
            out = 0.5 + factor * (out - 0.5)
        elif op == "noise":
            sigma = rng.uniform(0.0, 0.1)
            out += (sigma * rng.standard_normal((h, w, c))).astype(np.float32)
        elif op == "dropout":
            rate = rng.uniform(0.0, 0.2)
            keep = rng.random((h, w, c)) >= rate
            out *= keep
        elif op == "cutout":
            fh = rng.uniform(0.1, 0.5)
            fw = rng.uniform(0.1, 0.5)
            ph = max(1, round(fh * h))
            pw = max(1, round(fw * w))
            y0 = int(rng.integers(0, h - ph + 1))
            x0 = int(rng.integers(0, w - pw + 1))
            out[:, y0:y0 + ph, x0:x0 + pw] = 0.0
        else:
            raise ValueError(f"unknown strong op {op!r}")
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class WarpPlan:
    """Frame-resampling plan: which frames survive and who fills whom."""

    t: int
    kept: tuple
    source: tuple

    def __post_init__(self):
        if len(self.source) != self.t:
            raise ValueError("source length must equal t")
        kept = set(self.kept)
        if not kept <= set(range(self.t)):
            raise ValueError("kept indices out of range")
        if list(self.kept) != sorted(kept):
            raise ValueError("kept must be sorted and unique")
        if any(s not in kept for s in self.source):
            raise ValueError("source entries must come from kept")
        if any(a > b for a, b in zip(self.source, self.source[1:])):
            raise ValueError("source must be nondecreasing")
        if kept - set(self.source):
            raise ValueError("every kept frame must appear in source")


def fill_sources(t: int, kept, rng: np.random.Generator) -> list:
    """Expand sorted kept indices to a length-t nondecreasing source list.

    Each gap between consecutive kept frames l < r gets a boundary drawn
    uniformly from {l+1, ..., r}; gap positions before the boundary copy
    l, the rest copy r.  Positions before the first kept frame copy it;
    positions after the last copy it.  Every nondecreasing filling of a
    gap is reachable, and kept frames always map to themselves.
    """
    kept = list(kept)
    source = [kept[0]] * t
    for left, right in zip(kept, kept[1:]):
        boundary = int(rng.integers(left + 1, right + 1))
        for pos in range(left + 1, right):
            source[pos] = left if pos < boundary else right
        source[right] = right
    for pos in range(kept[-1] + 1, t):
        source[pos] = kept[-1]
    return source


def plan_temporal_warp(t: int, rng: np.random.Generator) -> WarpPlan:
    """Pick how many frames survive, which ones, and the gap filling.

    k is uniform over {t/4, t/2, t} when t is divisible by 4, else over
    {1, ceil(t/2), t}.  Draw order: k, kept set, then one boundary per
    gap left to right.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if t % 4 == 0:
        sizes = (t // 4, t // 2, t)
    else:
        sizes = (1, math.ceil(t / 2), t)
    k = int(sizes[int(rng.integers(0, 3))])
    kept = sorted(int(i) for i in rng.choice(t, size=k, replace=False))
    source = fill_sources(t, kept, rng)
    return WarpPlan(t=t, kept=tuple(kept), source=tuple(source))


def apply_temporal_warp(clip: np.ndarray, plan: WarpPlan) -> np.ndarray:
    """Reorder frames per the plan; spatial content is copied untouched."""
    clip = _check_clip(clip)
    if clip.shape[0] != plan.t:
        raise ValueError(f"plan is for t={plan.t}, clip has {clip.shape[0]} frames")
    return clip[np.asarray(plan.source)].copy()


def temporal_warp_augment(clip: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Convenience wrapper: plan a warp for this clip and apply it."""
    clip = _check_clip(clip)
    return apply_temporal_warp(clip, plan_temporal_warp(clip.shape[0], rng))
