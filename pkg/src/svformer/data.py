"""Procedural motion-classification dataset.

Each sample is a filled square on a toroidal canvas doing one of eight
things: shifting in a cardinal direction (1 px/frame), growing or
shrinking (1 px of side every 2 frames, clamped), blinking (visible on
even frames only), or sitting still.  The four shift classes are
indistinguishable from any single frame, so temporal modeling is
required to separate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CLASS_NAMES = (
    "shift-left", "shift-right", "shift-up", "shift-down",
    "grow", "shrink", "blink", "static",
)

SQUARE_VALUE = 0.9
NOISE_HIGH = 0.1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


@dataclass
class VideoSample:
    sample_id: int
    label: int
    clip: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class DatasetMeta:
    n_samples: int
    t: int
    h: int
    w: int
    c: int
    n_classes: int
    seed: int
    class_names: tuple = CLASS_NAMES

    def __post_init__(self):
        for name in ("t", "h", "w", "c", "n_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")


def stream_seed(master_seed: int, sample_id: int) -> int:
    """Per-sample 64-bit seed: SplitMix64 finalizer over a golden-ratio walk.

    Documented so generation can be parallelized or re-derived sample by
    sample without replaying the whole dataset.
    """
    x = (int(master_seed) + (sample_id + 1) * _GOLDEN) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _sample_rng(master_seed: int, sample_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, sample_id)))


def render_clip(label: int, side: int, y0: int, x0: int, t: int, h: int, w: int,
                c: int, noise_rng: np.random.Generator | None) -> np.ndarray:
    """Render one clip from its geometry; `noise_rng=None` draws no noise.

    The noiseless path is the test hook for the exact cyclic-shift
    property of the shift classes.
    """
    name = CLASS_NAMES[label]
    clip = np.zeros((t, h, w, c), dtype=np.float32)
    for f in range(t):
        y, x, s, visible = y0, x0, side, True
        if name == "shift-left":
            x = x0 - f
        elif name == "shift-right":
            x = x0 + f
        elif name == "shift-up":
            y = y0 - f
        elif name == "shift-down":
            y = y0 + f
        elif name == "grow":
            s = min(8, max(2, side + f // 2))
        elif name == "shrink":
            s = min(8, max(2, side - f // 2))
        elif name == "blink":
            visible = f % 2 == 0
        frame = np.zeros((h, w), dtype=np.float32)
        if visible:
            rows = (y + np.arange(s)) % h
            cols = (x + np.arange(s)) % w
            frame[np.ix_(rows, cols)] = SQUARE_VALUE
        if noise_rng is not None:
            frame += noise_rng.uniform(0.0, NOISE_HIGH, size=(h, w)).astype(np.float32)
        clip[f] = frame[:, :, None]
    return clip


def make_sample(sample_id: int, label: int, master_seed: int, t: int, h: int,
                w: int, c: int, noise: bool = True) -> VideoSample:
    """Draw geometry from the sample's own stream and render it.

    Draw order: side in {3..6}, y0, x0, then per-frame noise fields.
    """
    rng = _sample_rng(master_seed, sample_id)
    side = int(rng.integers(3, 7))
    y0 = int(rng.integers(0, h))
    x0 = int(rng.integers(0, w))
    clip = render_clip(label, side, y0, x0, t, h, w, c,
                       noise_rng=rng if noise else None)
    return VideoSample(sample_id=sample_id, label=label, clip=clip)


def generate_dataset(n_per_class: int, seed: int, t: int = 8, h: int = 16,
                     w: int = 16, c: int = 1, noise: bool = True):
    """Balanced dataset of n_per_class samples for each of the 8 classes.

    Returns (meta, samples); sample i has label i mod 8, so any prefix
    stays roughly balanced.  Content depends only on (seed, sample_id).
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    n_classes = len(CLASS_NAMES)
    n = n_per_class * n_classes
    samples = [
        make_sample(i, i % n_classes, seed, t, h, w, c, noise=noise)
        for i in range(n)
    ]
    meta = DatasetMeta(n_samples=n, t=t, h=h, w=w, c=c,
                       n_classes=n_classes, seed=seed)
    return meta, samples


def split_labeled(samples, rate: float, seed) -> tuple:
    """Per-class labeled/unlabeled split at labeling rate `rate`.

    round(rate * class_count) samples per class keep their labels; the
    rest are copied with label -1 into the unlabeled pool.  Both lists
    come back ordered by sample_id; their union is the input dataset.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    by_class: dict[int, list] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    rng = np.random.default_rng(seed)
    labeled, unlabeled = [], []
    for label in sorted(by_class):
        group = by_class[label]
        n_keep = int(math.floor(rate * len(group) + 0.5))
        if n_keep < 1:
            raise ValueError(
                f"rate {rate} keeps no labeled samples for class {label} "
                f"({len(group)} available)")
        order = rng.permutation(len(group))
        for rank, idx in enumerate(order):
            s = group[idx]
            if rank < n_keep:
                labeled.append(s)
            else:
                unlabeled.append(replace(s, label=-1))
    labeled.sort(key=lambda s: s.sample_id)
    unlabeled.sort(key=lambda s: s.sample_id)
    return labeled, unlabeled


def clips_array(samples) -> np.ndarray:
    """Stack sample clips into one (N, T, H, W, C) array."""
    return np.stack([s.clip for s in samples], axis=0)


def labels_array(samples) -> np.ndarray:
    return np.asarray([s.label for s in samples], dtype=np.int64)
