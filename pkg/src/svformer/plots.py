"""Figure rendering for training runs and ablation sweeps.

Everything draws through the Agg backend straight to files; no display
is ever required.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_training_curves(rows, path):
    """Two panels: loss components and validation accuracy per epoch."""
    epochs = [r["epoch"] for r in rows]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))

    for key, label in (("loss_s", "supervised"),
                       ("loss_un", "pseudo-label"),
                       ("loss_mix", "mix consistency")):
        ax_loss.plot(epochs, [r[key] for r in rows], label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_title("training losses")
    ax_loss.legend()

    ax_acc.plot(epochs, [r["val_top1"] for r in rows], label="top-1")
    ax_acc.plot(epochs, [r["val_top5"] for r in rows], label="top-5")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("val accuracy (%)")
    ax_acc.set_ylim(0, 102)
    ax_acc.set_title("validation accuracy")
    ax_acc.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_sweep_figure(param: str, settings, per_seed: dict, medians: dict, path):
    """Per-seed scatter plus the median trace for one swept parameter.

    `per_seed` maps setting -> list of final top-1 values; `medians`
    maps setting -> median.  `settings` fixes the x-axis order.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(settings))
    for x, setting in zip(xs, settings):
        vals = per_seed.get(setting, [])
        ax.scatter([x] * len(vals), vals, color="tab:gray", s=18, zorder=2,
                   label="per seed" if x == 0 else None)
    ax.plot(list(xs), [medians[s] for s in settings], "o-", color="tab:blue",
            zorder=3, label="median")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([str(s) for s in settings])
    ax.set_xlabel(param)
    ax.set_ylabel("final val top-1 (%)")
    ax.set_title(f"sweep over {param}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
