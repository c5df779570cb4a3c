"""Command-line front end: gen-data, train, eval, ablate.

Exit codes: 0 success, 2 usage/config problems, 3 numerical failure
during training.  SVF_SEED, when set, overrides the configured seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import (
    ConfigError,
    RunConfig,
    load_config_file,
    resolve_config,
    write_frozen_config,
)
from .data import generate_dataset
from .model import Model, init_model
from .plots import save_sweep_figure, save_training_curves
from .serial import (
    FormatError,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from .training import NonFiniteLossError, evaluate, run_training

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

METRIC_KEYS = ("epoch", "loss_s", "loss_un", "loss_mix", "q_mean",
               "lambda_mean", "lr", "val_top1", "val_top5", "wall_s")

ABLATE_PARAMS = ("delta", "b_u", "mask", "teacher", "augmentation")
AUGMENT_ARMS = {
    "none": (False, False),
    "spatial-only": (True, False),
    "temporal-only": (False, True),
    "both": (True, True),
}

# RunConfig fields whose CLI flag is not just the dashed field name.
_FLAG_ALIASES = {"out_dir": "out", "mask_strategy": "mask",
                 "teacher_mode": "teacher"}


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _parse_drops(text: str) -> tuple:
    if not text.strip():
        return ()
    return tuple(int(p) for p in text.split(","))


def _add_config_flags(parser: argparse.ArgumentParser):
    """One flag per RunConfig field, with None meaning 'not given'."""
    parser.add_argument("--config", metavar="FILE",
                        help="JSON config file (flat RunConfig keys)")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + _FLAG_ALIASES.get(f.name, f.name).replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction)
        elif f.name == "lr_drop_epochs":
            parser.add_argument(flag, dest=f.name, default=None,
                                type=_parse_drops, metavar="E1,E2,...")
        else:
            parser.add_argument(flag, dest=f.name, default=None,
                                type=type(f.default))


def _resolve_from_args(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else None
    flag_values = {f.name: getattr(args, f.name)
                   for f in dataclasses.fields(RunConfig)}
    cfg = resolve_config(file_values, flag_values)
    env_seed = os.environ.get("SVF_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"SVF_SEED must be an integer, got {env_seed!r}")
    return cfg


def _load_samples(path: str):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"dataset file not found: {path}")
    return load_dataset(p)


def cmd_gen_data(args) -> int:
    if args.per_class < 1:
        return _fail("--per-class must be >= 1")
    meta, samples = generate_dataset(args.per_class, args.seed)
    try:
        save_dataset(args.out, meta, samples)
    except OSError as e:
        return _fail(f"cannot write {args.out}: {e}")
    print(f"wrote {args.out}: {meta.n_samples} samples "
          f"({args.per_class} per class x {meta.n_classes} classes), "
          f"clip {meta.t}x{meta.h}x{meta.w}x{meta.c}, seed {meta.seed}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_from_args(args)
    if not cfg.data:
        return _fail("train needs a dataset (--data or config 'data')")
    if not cfg.out_dir:
        return _fail("train needs an output directory (--out or config 'out_dir')")
    _, train_samples = _load_samples(cfg.data)
    if cfg.val_data:
        _, val_samples = _load_samples(cfg.val_data)
    else:
        # no held-out set configured: report accuracy on the training set
        val_samples = train_samples

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_frozen_config(cfg, out / "config.json")

    metrics_path = out / "metrics.jsonl"
    rows = []

    def save_models(student, teacher):
        save_checkpoint(out / "student.svfc", student.params)
        save_checkpoint(out / "teacher.svfc", teacher.params)

    with open(metrics_path, "w") as mf:

        def on_epoch(epoch, student, teacher, row):
            rows.append(row)
            mf.write(json.dumps({k: row[k] for k in METRIC_KEYS}) + "\n")
            mf.flush()
            if (epoch + 1) % cfg.checkpoint_every == 0:
                save_models(student, teacher)

        try:
            student, teacher, _ = run_training(
                cfg.model_config(), cfg.ssl_config(), train_samples,
                val_samples, seed=cfg.seed, label_rate=cfg.label_rate,
                eval_n_clips=cfg.eval_n_clips, eval_n_crops=cfg.eval_n_crops,
                on_epoch=on_epoch)
        except NonFiniteLossError as e:
            save_models(e.student, e.teacher)
            status = {"status": "aborted", "epoch": e.epoch, "step": e.step,
                      "loss": str(e.value)}
            (out / "status.json").write_text(json.dumps(status) + "\n")
            if rows:
                save_training_curves(rows, out / "curves.png")
            print(f"error: {e}; last-good checkpoints retained in {out}",
                  file=sys.stderr)
            return EXIT_NUMERIC

    save_models(student, teacher)
    (out / "status.json").write_text(
        json.dumps({"status": "ok", "epochs": cfg.epochs}) + "\n")
    save_training_curves(rows, out / "curves.png")
    last = rows[-1]
    print(f"done: {cfg.epochs} epochs, final val top1 {last['val_top1']:.2f} "
          f"top5 {last['val_top5']:.2f}; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_from_args(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        return _fail(f"checkpoint not found: {ckpt}")
    if not cfg.data:
        return _fail("eval needs a dataset (--data or config 'data')")
    params = load_checkpoint(ckpt)
    template = init_model(cfg.model_config(), seed=0)
    t_names = template.params.names()
    if params.names() != t_names:
        return _fail(
            f"checkpoint parameters do not match the configured model: "
            f"expected {len(t_names)} entries, found {len(params)}")
    for name in t_names:
        want = template.params[name].shape
        got = params[name].shape
        if want != got:
            return _fail(f"shape mismatch for {name!r}: config says {want}, "
                         f"checkpoint has {got}")
    model = Model(config=cfg.model_config(), params=params)
    _, samples = _load_samples(cfg.data)
    top1, top5 = evaluate(model, samples, n_clips=cfg.eval_n_clips,
                          n_crops=cfg.eval_n_crops)
    n_views = cfg.eval_n_clips * cfg.eval_n_crops
    print(f"checkpoint: {ckpt}")
    print(f"dataset: {cfg.data} ({len(samples)} samples)")
    print(f"views: {cfg.eval_n_clips} clips x {cfg.eval_n_crops} crops = "
          f"{n_views} per sample (videos are single clips, so temporal "
          f"views coincide; none dropped)")
    print(f"top1: {top1:.2f}")
    print(f"top5: {top5:.2f}")
    return EXIT_OK


def _apply_setting(cfg: RunConfig, param: str, value: str) -> RunConfig:
    cfg = dataclasses.replace(cfg)
    if param == "delta":
        cfg.delta = float(value)
    elif param == "b_u":
        cfg.b_u = int(value)
    elif param == "mask":
        cfg.mask_strategy = value
    elif param == "teacher":
        cfg.teacher_mode = value
    elif param == "augmentation":
        if value not in AUGMENT_ARMS:
            raise ConfigError(
                f"augmentation arm must be one of {sorted(AUGMENT_ARMS)}, "
                f"got {value!r}")
        cfg.use_strong_spatial, cfg.use_twaug = AUGMENT_ARMS[value]
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}")
    cfg.validate()
    return cfg


def _ablate_run(cfg_dict: dict, param: str, value: str, seed: int):
    """One sweep cell; module-level so process pools can pickle it."""
    base = RunConfig(**{**cfg_dict, "lr_drop_epochs":
                        tuple(cfg_dict["lr_drop_epochs"])})
    cfg = _apply_setting(base, param, value)
    cfg.seed = seed
    _, train_samples = _load_samples(cfg.data)
    if cfg.val_data:
        _, val_samples = _load_samples(cfg.val_data)
    else:
        val_samples = train_samples
    _, _, rows = run_training(
        cfg.model_config(), cfg.ssl_config(), train_samples, val_samples,
        seed=cfg.seed, label_rate=cfg.label_rate,
        eval_n_clips=cfg.eval_n_clips, eval_n_crops=cfg.eval_n_crops)
    last = rows[-1]
    return value, seed, last["val_top1"], last["val_top5"]


def cmd_ablate(args) -> int:
    cfg = _resolve_from_args(args)
    if args.param not in ABLATE_PARAMS:
        return _fail(f"unknown sweep parameter {args.param!r}; "
                     f"choose from {', '.join(ABLATE_PARAMS)}")
    if not cfg.data:
        return _fail("ablate needs a dataset (--data or config 'data')")
    if not cfg.out_dir:
        return _fail("ablate needs an output directory (--out)")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    if not values or not seeds:
        return _fail("--values and --seeds must be non-empty")
    for v in values:  # validate every cell before spending any compute
        _apply_setting(cfg, args.param, v)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_frozen_config(cfg, out / "config.json")

    cells = [(v, s) for v in values for s in seeds]
    cfg_dict = cfg.to_dict()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(
                _ablate_run, *zip(*[(cfg_dict, args.param, v, s)
                                    for v, s in cells])))
    else:
        results = [_ablate_run(cfg_dict, args.param, v, s) for v, s in cells]

    by_value: dict = {v: [] for v in values}
    for value, seed, top1, top5 in results:
        by_value[value].append((seed, top1, top5))

    with open(out / "summary.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["param", "value", "seed", "final_top1", "final_top5"])
        for value in values:
            for seed, top1, top5 in by_value[value]:
                wr.writerow([args.param, value, seed,
                             f"{top1:.4f}", f"{top5:.4f}"])

    medians = {v: statistics.median(r[1] for r in by_value[v]) for v in values}
    with open(out / "medians.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["param", "value", "median_top1", "n_seeds"])
        for value in values:
            wr.writerow([args.param, value, f"{medians[value]:.4f}",
                         len(by_value[value])])

    per_seed = {v: [r[1] for r in by_value[v]] for v in values}
    save_sweep_figure(args.param, values, per_seed, medians, out / "sweep.png")

    print(f"{'value':>14}  {'median top1':>11}  per-seed")
    for value in values:
        runs = ", ".join(f"{t1:.1f}" for _, t1, _ in by_value[value])
        print(f"{value:>14}  {medians[value]:>11.2f}  [{runs}]")
    print(f"artifacts in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svformer",
        description="Semi-supervised video transformer trainer (toy scale)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--per-class", type=int, required=True,
                   help="samples per class (8 classes)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run semi-supervised training")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one parameter over seeds")
    p.add_argument("--param", required=True,
                   help=f"one of {', '.join(ABLATE_PARAMS)}")
    p.add_argument("--values", required=True, help="comma-separated settings")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel runs (default sequential)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, FormatError) as e:
        return _fail(str(e))
    except NonFiniteLossError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
