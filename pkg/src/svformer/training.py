"""Semi-supervised training engine: losses, EMA teacher, train loop.

The objective is  L = L_s + gamma1 * L_un + gamma2 * L_mix:
supervised cross-entropy on weak views of labeled clips; confidence-
gated cross-entropy of the student on strong views against hard teacher
pseudo-labels; and a mixed-clip consistency term where two differently
augmented copies of the unlabeled batch are combined under a token mask
and the student must match the matching blend of teacher soft targets.

Teacher predictions are always computed without gradients; the teacher
moves only through `ema_update` (or is literally the student object in
shared mode).

Every stochastic routine takes one Generator and derives private
substreams from it in a fixed order, so disabling one loss term never
perturbs the draws of another.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import (
    resize_bilinear,
    strong_spatial_augment,
    temporal_warp_augment,
    weak_augment,
)
from .mix import (
    MASK_STRATEGIES,
    PIXEL_BASELINES,
    gen_mask,
    mix_clips,
    mix_labels,
    pixel_mix_baseline,
    sample_lambda,
)
from .model import Model, forward, init_model, predict_probs
from .tensor import Tensor, backward, cross_entropy, mean_squared_l2, sgd_step, softmax
from .data import split_labeled


class NonFiniteLossError(RuntimeError):
    """Raised before any parameter update when training leaves the reals."""

    def __init__(self, epoch: int, step: int, value: float, what: str = "loss"):
        super().__init__(f"non-finite {what} {value} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.value = value
        self.what = what


@dataclass
class SSLConfig:
    delta: float = 0.3
    gamma1: float = 2.0
    gamma2: float = 2.0
    ema_momentum: float = 0.99
    alpha: float = 10.0
    b_l: int = 1
    b_u: int = 5
    epochs: int = 30
    base_lr: float = 0.005
    lr_drop_epochs: tuple = (25, 28)
    mask_strategy: str = "tube"
    teacher_mode: str = "ema"
    use_twaug: bool = True
    use_strong_spatial: bool = True
    sgd_momentum: float = 0.9
    weight_decay: float = 0.001
    per_sample_mask: bool = False
    use_q_gate: bool = True
    teacher_weak: bool = True

    def __post_init__(self):
        # delta is nominally a threshold in (0,1); 0 and 1 are accepted
        # so the gate can be forced fully open or fully closed.
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1/gamma2 must be >= 0")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ValueError(f"ema_momentum must be in [0, 1), got {self.ema_momentum}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.b_l < 1 or self.b_u < 0:
            raise ValueError("b_l must be >= 1 and b_u >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        drops = tuple(self.lr_drop_epochs)
        if list(drops) != sorted(drops) or any(d >= self.epochs for d in drops):
            raise ValueError("lr_drop_epochs must be sorted and all < epochs")
        object.__setattr__(self, "lr_drop_epochs", drops)
        if self.mask_strategy not in MASK_STRATEGIES + PIXEL_BASELINES:
            raise ValueError(f"unknown mask_strategy {self.mask_strategy!r}")
        if self.teacher_mode not in ("ema", "shared"):
            raise ValueError(f"teacher_mode must be ema or shared, got {self.teacher_mode!r}")


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    confidence: float
    hard_label: int


@dataclass
class TrainBatch:
    labeled_clips: np.ndarray
    labels: np.ndarray
    unlabeled_clips: np.ndarray


def _zero_loss() -> Tensor:
    return Tensor(np.float32(0.0))


def _weak_batch(clips, rng) -> np.ndarray:
    return np.stack([weak_augment(c, rng) for c in clips], axis=0)


def supervised_loss(student: Model, clips, labels, rng):
    """Cross-entropy on weak views; returns (loss, had_labeled_flag)."""
    clips = np.asarray(clips)
    if clips.shape[0] == 0:
        return _zero_loss(), False
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= student.config.n_classes:
        raise ValueError("labels out of range")
    r_aug, r_drop = rng.spawn(2)
    views = _weak_batch(clips, r_aug)
    logits = forward(student, views, train_mode=True, rng=r_drop)
    return cross_entropy(logits, labels), True


def pseudo_label(teacher: Model, clip, delta: float, rng):
    """Teacher prediction on a weak view; hard iff confidence >= delta.

    Returns (Prediction, "hard" | "soft").
    """
    view = weak_augment(np.asarray(clip), rng)
    probs = predict_probs(teacher, view[None])[0]
    hard = int(np.argmax(probs))
    conf = float(probs[hard])
    return Prediction(probs=probs, confidence=conf, hard_label=hard), (
        "hard" if conf >= delta else "soft")


def teacher_soft_predictions(teacher: Model, clips, rng,
                             weak: bool = True) -> np.ndarray:
    """Gradient-free teacher probabilities, on weak views by default."""
    clips = np.asarray(clips)
    views = _weak_batch(clips, rng) if weak else clips
    probs = predict_probs(teacher, views)
    # diverged teacher weights would otherwise surface as confusing
    # downstream shape/probability errors instead of a clean abort
    if probs.size and not np.isfinite(probs).all():
        raise NonFiniteLossError(-1, -1, float("nan"),
                                 what="teacher probabilities")
    return probs


def unsupervised_loss(student: Model, teacher: Model, clips, delta: float, rng,
                      use_strong: bool = True, teacher_probs=None):
    """Confidence-gated pseudo-label loss, mean over the full batch.

    Teacher pseudo-labels come from weak views; the student sees strong
    views.  A sample contributes only when its teacher confidence is
    strictly above delta, but the mean divides by the whole batch size.
    `teacher_probs` lets the caller reuse precomputed weak-view
    predictions; otherwise they are derived from `rng`'s first substream.
    """
    clips = np.asarray(clips)
    n = clips.shape[0]
    if n == 0:
        return _zero_loss(), {"n_confident": 0, "confidences": np.zeros(0)}
    r_weak, r_aug, r_drop = rng.spawn(3)
    if teacher_probs is None:
        teacher_probs = teacher_soft_predictions(teacher, clips, r_weak)
    conf = teacher_probs.max(axis=1)
    hard = teacher_probs.argmax(axis=1)
    gate = (conf > delta).astype(np.float64)

    strong = strong_spatial_augment if use_strong else weak_augment
    views = np.stack([strong(c, r_aug) for c in clips], axis=0)
    logits = forward(student, views, train_mode=True, rng=r_drop)
    loss = cross_entropy(logits, hard, weights=gate)
    return loss, {"n_confident": int(gate.sum()), "confidences": conf}


def mix_consistency_loss(student: Model, teacher: Model, clips,
                         config: SSLConfig, rng, teacher_probs=None,
                         return_details: bool = False):
    """Consistency loss on mask-mixed clip pairs (the mixed-target step).

    The batch is paired with a shuffled copy of itself: the in-order
    copy gets strong spatial augmentation, the shuffled copy gets a
    temporal warp.  The two are combined under one token mask with
    realized ratio lambda; the matching blend of teacher soft targets
    (and confidences) defines the target z_m and gate fraction
    q = mean(c_m >= delta).  Loss = q * mean ||softmax(student) - z_m||^2.

    Returns (loss, diagnostics); diagnostics always carries q and
    lambda_eff, plus the intermediate arrays when `return_details`.
    """
    clips = np.asarray(clips)
    n = clips.shape[0]
    diag = {"q": 0.0, "lambda_nominal": 0.0, "lambda_eff": 0.0, "skipped": False}
    if n < 2:
        diag["skipped"] = True
        diag["warning"] = f"mix step skipped: batch size {n} < 2"
        return _zero_loss(), diag

    r_weak, r_plan, r_aug_a, r_aug_b, r_drop = rng.spawn(5)
    if teacher_probs is None:
        teacher_probs = teacher_soft_predictions(
            teacher, clips, r_weak, weak=config.teacher_weak)

    perm = r_plan.permutation(n)
    z_u = teacher_probs
    z_s = teacher_probs[perm]
    c_u = z_u.max(axis=1)
    c_s = z_s.max(axis=1)

    lam = sample_lambda(config.alpha, r_plan)
    cfg_model = student.config
    gh, gw, t = cfg_model.grid_h, cfg_model.grid_w, cfg_model.t

    if config.use_strong_spatial:
        copy_a = np.stack([strong_spatial_augment(c, r_aug_a) for c in clips])
    else:
        copy_a = np.stack([weak_augment(c, r_aug_a) for c in clips])
    if config.use_twaug:
        aug_b = temporal_warp_augment
    elif config.use_strong_spatial:
        aug_b = strong_spatial_augment
    else:
        aug_b = weak_augment
    copy_b = np.stack([aug_b(clips[j], r_aug_b) for j in perm])

    masks = []
    if config.mask_strategy in MASK_STRATEGIES:
        n_masks = n if config.per_sample_mask else 1
        masks = [gen_mask(config.mask_strategy, gh, gw, t, lam, r_plan)
                 for _ in range(n_masks)]
        lam_eff = np.array([masks[i % n_masks].realized_lambda for i in range(n)])
        mixed = np.stack([
            mix_clips(copy_a[i], copy_b[i], masks[i % n_masks], cfg_model.patch)
            for i in range(n)
        ])
    else:
        pairs = [pixel_mix_baseline(config.mask_strategy, copy_a[i], copy_b[i],
                                    lam, r_plan) for i in range(n)]
        mixed = np.stack([p[0] for p in pairs])
        lam_eff = np.array([p[1] for p in pairs])

    z_m = np.stack([mix_labels(z_u[i], z_s[i], lam_eff[i]) for i in range(n)])
    c_m = lam_eff * c_u + (1.0 - lam_eff) * c_s
    q = float(np.mean(c_m >= config.delta))

    logits = forward(student, mixed, train_mode=True, rng=r_drop)
    y_m = softmax(logits, axis=-1)
    mse = mean_squared_l2(y_m, z_m.astype(np.float32))
    if config.use_q_gate:
        # q = 0 zeroes both the value and every gradient, so drop the
        # graph instead of backpropagating through a scaled-to-zero term
        loss = q * mse if q > 0.0 else _zero_loss()
    else:
        loss = mse

    diag.update(q=q, lambda_nominal=lam, lambda_eff=float(lam_eff.mean()))
    if return_details:
        diag.update(perm=perm, masks=masks, lam_eff_per_sample=lam_eff,
                    copy_a=copy_a, copy_b=copy_b, mixed=mixed, z_m=z_m,
                    c_m=c_m, teacher_probs=teacher_probs)
    return loss, diag


def ema_update(teacher_params, student_params, m: float):
    """theta_t <- m * theta_t + (1 - m) * theta_s, in place on the teacher."""
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {m}")
    t_names = teacher_params.names()
    s_names = student_params.names()
    if t_names != s_names:
        raise ValueError("teacher/student parameter names differ")
    for name in t_names:
        t, s = teacher_params[name], student_params[name]
        if t.data.shape != s.data.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        t.data *= m
        t.data += (1.0 - m) * s.data


def total_loss(l_s, l_un, l_mix, gamma1: float, gamma2: float):
    """L_s + gamma1 * L_un + gamma2 * L_mix (zero weights skip the term)."""
    out = l_s
    if gamma1:
        out = out + gamma1 * l_un
    if gamma2:
        out = out + gamma2 * l_mix
    return out


def lr_at(epoch: int, config: SSLConfig) -> float:
    """Step schedule: base_lr divided by 10 at each drop epoch."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    n_drops = sum(1 for d in config.lr_drop_epochs if epoch >= d)
    return config.base_lr * (0.1 ** n_drops)


def train_step(student: Model, teacher: Model, batch: TrainBatch,
               config: SSLConfig, lr: float, rng) -> dict:
    """One optimization step; returns the step's loss metrics.

    Substream order (fixed): supervised, unlabeled weak views, gated
    loss, mix loss.  Terms with zero weight (or too little data) are
    skipped without touching their substreams, so e.g. gamma1=gamma2=0
    takes the bit-identical supervised path of a supervised-only run.
    """
    r_sup, r_weak_u, r_un, r_mix = rng.spawn(4)

    l_s, had_labeled = supervised_loss(student, batch.labeled_clips,
                                       batch.labels, r_sup)
    n_u = len(batch.unlabeled_clips)
    need_un = config.gamma1 > 0 and n_u > 0
    need_mix = config.gamma2 > 0 and n_u > 0

    # The gated loss always reads the teacher on weak views; the mix loss
    # does too unless teacher_weak is off.  Share one teacher pass only
    # when both terms would see the same views.
    probs = None
    if (need_un or need_mix) and config.teacher_weak:
        probs = teacher_soft_predictions(teacher, batch.unlabeled_clips,
                                         r_weak_u, weak=True)

    if need_un:
        l_un, un_info = unsupervised_loss(
            student, teacher, batch.unlabeled_clips, config.delta, r_un,
            use_strong=config.use_strong_spatial, teacher_probs=probs)
    else:
        l_un, un_info = _zero_loss(), {"n_confident": 0}

    if need_mix:
        l_mix, mix_info = mix_consistency_loss(
            student, teacher, batch.unlabeled_clips, config, r_mix,
            teacher_probs=probs)
    else:
        l_mix, mix_info = _zero_loss(), {"q": 0.0, "lambda_eff": 0.0,
                                         "skipped": n_u < 2}

    total = total_loss(l_s, l_un, l_mix, config.gamma1, config.gamma2)
    if not np.isfinite(total.data):
        raise NonFiniteLossError(-1, -1, float(total.data))

    backward(total, params=student.params)
    for _, t in student.params.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            # a finite loss can still yield overflowing gradients once
            # weights get large; stop before the update corrupts params
            student.params.zero_grads()
            raise NonFiniteLossError(-1, -1, float("nan"), what="gradient")
    sgd_step(student.params, lr, momentum=config.sgd_momentum,
             weight_decay=config.weight_decay)
    if config.teacher_mode == "ema":
        ema_update(teacher.params, student.params, config.ema_momentum)

    return {
        "loss_s": float(l_s.data),
        "loss_un": float(l_un.data),
        "loss_mix": float(l_mix.data),
        "loss_total": float(total.data),
        "q": float(mix_info.get("q", 0.0)),
        "lambda_eff": float(mix_info.get("lambda_eff", 0.0)),
        "mix_ran": bool(need_mix and not mix_info.get("skipped", False)),
        "n_confident": int(un_info.get("n_confident", 0)),
        "had_labeled": had_labeled,
        "lr": lr,
    }


def _crop_views(clips: np.ndarray, n_crops: int) -> list:
    """Deterministic spatial views: 1.25x upscale, crops along the diagonal."""
    if n_crops <= 1:
        return [clips]
    n, t, h, w, c = clips.shape
    sh, sw = round(h * 1.25), round(w * 1.25)
    scaled = np.stack([resize_bilinear(clip, sh, sw) for clip in clips])
    oys = np.round(np.linspace(0, sh - h, n_crops)).astype(int)
    oxs = np.round(np.linspace(0, sw - w, n_crops)).astype(int)
    return [scaled[:, :, oy:oy + h, ox:ox + w] for oy, ox in zip(oys, oxs)]


def evaluate(model: Model, samples, n_clips: int = 1, n_crops: int = 1,
             batch_size: int = 64):
    """Top-1/top-5 accuracy (percent) with averaged softmax over views.

    Videos here are exactly one clip long, so the n_clips temporal views
    coincide; spatial crops are distinct.  Deterministic (no rng).
    """
    if not len(samples):
        raise ValueError("cannot evaluate on an empty dataset")
    if n_clips < 1 or n_crops < 1:
        raise ValueError("n_clips and n_crops must be >= 1")
    clips = np.stack([s.clip for s in samples])
    labels = np.asarray([s.label for s in samples])
    probs = np.zeros((clips.shape[0], model.config.n_classes))
    for view in _crop_views(clips, n_crops):
        probs += n_clips * predict_probs(model, view, batch_size=batch_size)
    probs /= n_clips * n_crops

    order = np.argsort(-probs, axis=1, kind="stable")
    top1 = float(np.mean(order[:, 0] == labels) * 100.0)
    k = min(5, model.config.n_classes)
    top5 = float(np.mean((order[:, :k] == labels[:, None]).any(axis=1)) * 100.0)
    return top1, top5


def _cycled(order: np.ndarray, start: int, count: int) -> np.ndarray:
    idx = (start + np.arange(count)) % len(order)
    return order[idx]


def run_training(model_config, ssl_config: SSLConfig, train_samples,
                 val_samples, seed: int, label_rate: float,
                 eval_n_clips: int = 1, eval_n_crops: int = 1,
                 on_epoch=None):
    """Full SSL run; returns (student, teacher, per-epoch metric rows).

    Seed handling: one root SeedSequence fans out to init, the
    labeled/unlabeled split, and per-epoch streams (shuffles plus one
    substream per step), so runs are reproducible end to end.
    `on_epoch(epoch, student, teacher, row)` fires after each epoch.
    A non-finite total loss aborts by raising NonFiniteLossError with
    the parameters still in their last good state.
    """
    root = np.random.SeedSequence(seed)
    ss_init, ss_split, ss_train = root.spawn(3)

    student = init_model(model_config, ss_init)
    if ssl_config.teacher_mode == "ema":
        teacher = Model(config=model_config, params=student.params.copy())
    else:
        teacher = student

    if label_rate >= 1.0:
        labeled, unlabeled = list(train_samples), []
    else:
        labeled, unlabeled = split_labeled(train_samples, label_rate, ss_split)
    l_clips = np.stack([s.clip for s in labeled]) if labeled else np.zeros(
        (0, model_config.t, model_config.h, model_config.w, model_config.c),
        dtype=np.float32)
    l_labels = np.asarray([s.label for s in labeled], dtype=np.int64)
    u_clips = np.stack([s.clip for s in unlabeled]) if unlabeled else np.zeros(
        (0,) + l_clips.shape[1:], dtype=np.float32)

    n_l, n_u = len(labeled), len(unlabeled)
    steps = max(math.ceil(n_l / ssl_config.b_l) if n_l else 0,
                math.ceil(n_u / ssl_config.b_u) if n_u and ssl_config.b_u else 0)
    if steps == 0:
        raise ValueError("no training data after the labeled/unlabeled split")

    epoch_seeds = ss_train.spawn(ssl_config.epochs)
    rows = []
    for epoch in range(ssl_config.epochs):
        t0 = time.perf_counter()
        children = epoch_seeds[epoch].spawn(2 + steps)
        rng_l = np.random.default_rng(children[0])
        rng_u = np.random.default_rng(children[1])
        order_l = rng_l.permutation(n_l) if n_l else np.zeros(0, dtype=int)
        order_u = rng_u.permutation(n_u) if n_u else np.zeros(0, dtype=int)

        lr = lr_at(epoch, ssl_config)
        sums = {"loss_s": 0.0, "loss_un": 0.0, "loss_mix": 0.0, "q": 0.0}
        lam_sum, mix_steps = 0.0, 0
        for step in range(steps):
            if n_l:
                li = _cycled(order_l, step * ssl_config.b_l, ssl_config.b_l)
                batch_l, batch_y = l_clips[li], l_labels[li]
            else:
                batch_l, batch_y = l_clips[:0], l_labels[:0]
            if n_u and ssl_config.b_u:
                ui = _cycled(order_u, step * ssl_config.b_u, ssl_config.b_u)
                batch_u = u_clips[ui]
            else:
                batch_u = u_clips[:0]
            batch = TrainBatch(labeled_clips=batch_l, labels=batch_y,
                               unlabeled_clips=batch_u)
            step_rng = np.random.default_rng(children[2 + step])
            try:
                m = train_step(student, teacher, batch, ssl_config, lr, step_rng)
            except NonFiniteLossError as e:
                err = NonFiniteLossError(epoch, step, e.value, e.what)
                # parameters are still in their last good state: every
                # check fires before sgd_step touches them
                err.student = student
                err.teacher = teacher
                raise err from None
            for key in sums:
                sums[key] += m[key]
            if m["mix_ran"]:
                lam_sum += m["lambda_eff"]
                mix_steps += 1

        val_top1, val_top5 = evaluate(student, val_samples,
                                      n_clips=eval_n_clips, n_crops=eval_n_crops)
        row = {
            "epoch": epoch,
            "loss_s": sums["loss_s"] / steps,
            "loss_un": sums["loss_un"] / steps,
            "loss_mix": sums["loss_mix"] / steps,
            "q_mean": sums["q"] / steps,
            "lambda_mean": lam_sum / mix_steps if mix_steps else 0.0,
            "lr": lr,
            "val_top1": val_top1,
            "val_top5": val_top5,
            "wall_s": time.perf_counter() - t0,
        }
        rows.append(row)
        if on_epoch is not None:
            on_epoch(epoch, student, teacher, row)
    return student, teacher, rows
