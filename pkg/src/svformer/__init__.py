"""Semi-supervised video recognition at desk scale.

A small numpy autodiff engine, a divided space-time attention
transformer, weak/strong/temporal-warp augmentations, token-mask clip
mixing, and an EMA-teacher training loop with confidence-gated
pseudo-labels and a mixed-clip consistency loss, validated on a
procedural motion dataset.
"""

from .augment import (
    WarpPlan,
    apply_temporal_warp,
    plan_temporal_warp,
    strong_spatial_augment,
    temporal_warp_augment,
    weak_augment,
)
from .config import ConfigError, RunConfig, resolve_config
from .data import (
    CLASS_NAMES,
    DatasetMeta,
    VideoSample,
    generate_dataset,
    split_labeled,
)
from .mix import TokenMask, gen_mask, mix_clips, mix_labels, pixel_mix_baseline, sample_lambda
from .model import (
    B_TOY,
    S_TOY,
    Model,
    ModelConfig,
    forward,
    forward_tokens,
    init_model,
    predict_probs,
    tokenize,
)
from .serial import (
    FormatError,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from .tensor import (
    ParamSet,
    Tensor,
    backward,
    concat,
    cross_entropy,
    dropout,
    gelu,
    layer_norm,
    mean_squared_l2,
    no_grad,
    sgd_step,
    softmax,
)
from .training import (
    NonFiniteLossError,
    Prediction,
    SSLConfig,
    TrainBatch,
    ema_update,
    evaluate,
    lr_at,
    mix_consistency_loss,
    pseudo_label,
    run_training,
    supervised_loss,
    total_loss,
    train_step,
    unsupervised_loss,
)

__version__ = "0.1.0"
