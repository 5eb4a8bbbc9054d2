"""Figure rendering for the CLI report paths.

Figures are written next to the delimited outputs (loss CSV, metrics JSON)
with fixed PNG metadata so repeated runs stay byte-identical.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_PNG_METADATA = {"Software": "lglstm"}


def save_loss_curve(loss_trace, metric_trace, path):
    """Loss-per-step curve, with a metrics panel when a metric trace exists."""
    panels = 2 if metric_trace else 1
    fig, axes = plt.subplots(1, panels, figsize=(5.0 * panels, 3.4))
    axes = [axes] if panels == 1 else list(axes)
    steps = [s for s, _ in loss_trace]
    losses = [l for _, l in loss_trace]
    axes[0].plot(steps, losses, lw=1.0)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("total loss")
    axes[0].set_title("training loss")
    if metric_trace:
        msteps = [s for s, _, _ in metric_trace]
        axes[1].plot(msteps, [a for _, a, _ in metric_trace], lw=1.0, label="pixel acc")
        axes[1].plot(msteps, [m for _, _, m in metric_trace], lw=1.0, label="mean IoU")
        axes[1].set_xlabel("step")
        axes[1].set_ylim(0.0, 1.05)
        axes[1].legend(loc="lower right")
        axes[1].set_title("training-set metrics")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def save_metrics_chart(reports, path):
    """Grouped per-class IoU bars for one or more named evaluation reports."""
    names = list(reports)
    num_classes = len(reports[names[0]].iou)
    xs = range(num_classes)
    width = 0.8 / len(names)
    fig, ax = plt.subplots(figsize=(1.2 * num_classes + 2.5, 3.4))
    for i, name in enumerate(names):
        iou = [v if v is not None else 0.0 for v in reports[name].iou]
        offset = (i - (len(names) - 1) / 2.0) * width
        ax.bar([x + offset for x in xs], iou, width=width, label=name)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"class {c}" for c in xs])
    ax.set_ylabel("IoU")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("per-class IoU")
    if len(names) > 1 or names[0]:
        ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
