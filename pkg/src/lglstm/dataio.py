"""Synthetic part-parsing dataset, portable pixmap I/O, and segmentation
metrics.

The generator draws one axis-aligned "creature" per sample whose head and
tail share one intensity distribution, so telling them apart requires the
spatial layout relative to the body rather than local brightness.
"""

import json
import os
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, LabelError
from .training import Prng

NUM_CLASSES = 5
CLASS_NAMES = ("background", "body", "head", "tail", "legs")

# base intensity per class; head and tail deliberately identical
BASE_INTENSITY = {0: 0.05, 1: 0.40, 2: 0.95, 3: 0.95, 4: 0.65}
NOISE_SIGMA = 0.05

# fixed render palette for label maps (RGB per class)
PALETTE = ((0, 0, 0), (200, 60, 60), (60, 120, 220), (240, 200, 60), (80, 200, 120))


@dataclass
class SegSample:
    image: np.ndarray   # [H, W, 1] grayscale in [0, 1]
    labels: np.ndarray  # [H, W] int class indices


def synth_generate(seed, n, height, width):
    """Generate n seeded samples of the synthetic creature benchmark.

    Geometry ranges (fractions of the image side, clamped to keep a one-pixel
    outer margin): body width 30-50% of W, body height 24-34% of H, head a
    square of 80-100% of the body height attached to one horizontal end,
    tail a 2 px thick line of 16-26% of W on the opposite end, two 2 px wide
    legs of 16-26% of H under the body.  Intensities are per-class bases
    plus clamped Gaussian noise (sigma 0.05); head and tail share one base.
    """
    if height < 24 or width < 24:
        raise ConfigError(f"synthetic images need H, W >= 24, got {height}x{width}")
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    rng = Prng(seed)
    samples = []
    for _ in range(n):
        samples.append(_draw_creature(rng, height, width))
    return samples


def _draw_creature(rng, height, width):
    body_w = rng.randint(round(0.30 * width), round(0.50 * width))
    body_h = rng.randint(max(5, round(0.24 * height)), max(6, round(0.34 * height)))
    head_side = rng.randint(max(4, round(0.8 * body_h)), body_h)
    tail_len = rng.randint(max(3, round(0.16 * width)), max(4, round(0.26 * width)))
    tail_th = 2
    leg_h = rng.randint(max(3, round(0.16 * height)), max(4, round(0.26 * height)))
    leg_w = 2
    head_right = rng.next_float() < 0.5

    # keep the whole creature inside a one-pixel margin
    body_w = min(body_w, width - 2 - tail_len - head_side)
    total_w = tail_len + body_w + head_side
    row0 = rng.randint(1, height - body_h - leg_h - 1)
    col0 = rng.randint(1, width - 1 - total_w)

    labels = np.zeros((height, width), dtype=np.int64)
    if head_right:
        tail_c0 = col0
        body_c0 = col0 + tail_len
        head_c0 = body_c0 + body_w
    else:
        head_c0 = col0
        body_c0 = col0 + head_side
        tail_c0 = body_c0 + body_w
    labels[row0:row0 + body_h, body_c0:body_c0 + body_w] = 1
    head_r0 = row0 + (body_h - head_side) // 2
    labels[head_r0:head_r0 + head_side, head_c0:head_c0 + head_side] = 2
    tail_r0 = row0 + (body_h - tail_th) // 2
    labels[tail_r0:tail_r0 + tail_th, tail_c0:tail_c0 + tail_len] = 3
    leg_r0 = row0 + body_h
    labels[leg_r0:leg_r0 + leg_h, body_c0 + 1:body_c0 + 1 + leg_w] = 4
    labels[leg_r0:leg_r0 + leg_h, body_c0 + body_w - 1 - leg_w:body_c0 + body_w - 1] = 4

    base = np.array([BASE_INTENSITY[c] for c in range(NUM_CLASSES)])
    image = base[labels]
    noise = rng.normal_array((height, width), 0.0, NOISE_SIGMA)
    image = np.clip(image + noise, 0.0, 1.0)
    return SegSample(image=image[..., None], labels=labels)


# --------------------------------------------------------------------------
# portable pixmap I/O (binary P5/P6, maxval 255, single-whitespace headers)
# --------------------------------------------------------------------------

def _parse_header(data, path):
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: bad magic {data[:2]!r}, expected P5 or P6", 0)
    magic = data[:2].decode()
    pos = 2
    fields = []
    for _ in range(3):
        if pos >= len(data) or data[pos:pos + 1] not in b" \t\n\r":
            raise FormatError(f"{path}: expected single whitespace separator", pos)
        pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise FormatError(f"{path}: expected decimal header field", pos)
        fields.append(int(data[start:pos]))
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\n\r":
        raise FormatError(f"{path}: expected single whitespace before pixel data", pos)
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, expected 255", pos)
    return magic, width, height, pos


def read_pnm(path):
    """Read a binary P5 (-> [H, W, 1]) or P6 (-> [H, W, 3]) file, scaled by 1/255."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, width, height, pos = _parse_header(data, path)
    channels = 1 if magic == "P5" else 3
    need = width * height * channels
    if len(data) - pos < need:
        raise FormatError(
            f"{path}: body has {len(data) - pos} bytes, expected {need}", pos)
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return raw.reshape(height, width, channels).astype(np.float64) / 255.0


def write_pnm(path, tensor):
    """Write [H, W, 1] as P5 or [H, W, 3] as P6, quantizing values in [0, 1]."""
    if tensor.ndim != 3 or tensor.shape[2] not in (1, 3):
        raise DimensionError(f"write_pnm: expected [H, W, 1] or [H, W, 3], got {tensor.shape}")
    height, width, channels = tensor.shape
    magic = b"P5" if channels == 1 else b"P6"
    body = np.clip(np.rint(tensor * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(body.tobytes())


def write_label_pgm(path, labels):
    """Store a label map as P5 with raw class indices as pixel values."""
    if labels.min() < 0 or labels.max() > 255:
        raise LabelError(f"labels outside [0, 255] cannot be stored in a PGM")
    height, width = labels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(labels.astype(np.uint8).tobytes())


def read_label_pgm(path):
    """Read a label map stored by write_label_pgm back as an int array."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, width, height, pos = _parse_header(data, path)
    if magic != "P5":
        raise FormatError(f"{path}: label maps must be P5", 0)
    need = width * height
    if len(data) - pos < need:
        raise FormatError(f"{path}: body has {len(data) - pos} bytes, expected {need}", pos)
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return raw.reshape(height, width).astype(np.int64)


def write_color_ppm(path, labels, palette=PALETTE):
    """Render a label map to P6 with a fixed palette."""
    if labels.max() >= len(palette):
        raise LabelError(f"label {int(labels.max())} has no palette entry "
                         f"(palette has {len(palette)})")
    lut = np.array(palette, dtype=np.uint8)
    rgb = lut[labels]
    height, width = labels.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, height))
        fh.write(rgb.tobytes())


def save_dataset(samples, out_dir, seed=None):
    """Write image/label PNM pairs plus a manifest.json into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        image_name = f"sample_{i:04d}.pgm"
        label_name = f"sample_{i:04d}_labels.pgm"
        write_pnm(os.path.join(out_dir, image_name), sample.image)
        write_label_pgm(os.path.join(out_dir, label_name), sample.labels)
        entries.append({"image": image_name, "labels": label_name})
    height, width = samples[0].labels.shape
    manifest = {"count": len(samples), "height": height, "width": width,
                "classes": NUM_CLASSES, "samples": entries}
    if seed is not None:
        manifest["seed"] = seed
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(data_dir):
    """Load a dataset previously written by save_dataset."""
    manifest_path = os.path.join(data_dir, "manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    samples = []
    for entry in manifest["samples"]:
        image = read_pnm(os.path.join(data_dir, entry["image"]))
        labels = read_label_pgm(os.path.join(data_dir, entry["labels"]))
        samples.append(SegSample(image=image, labels=labels))
    return samples, manifest


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Confusion-matrix metrics; per-class entries are None when the class is
    absent from both prediction and ground truth (excluded from averages)."""

    pixel_acc: float
    fg_acc: Optional[float]
    precision: List[Optional[float]]
    recall: List[Optional[float]]
    f1: List[Optional[float]]
    iou: List[Optional[float]]
    avg_precision: Optional[float]
    avg_recall: Optional[float]
    avg_f1: Optional[float]
    mean_iou: Optional[float]
    fg_iou: Optional[float]
    confusion: np.ndarray

    def to_json_dict(self):
        per_class = {
            str(c): {"precision": self.precision[c], "recall": self.recall[c],
                     "f1": self.f1[c], "iou": self.iou[c]}
            for c in range(len(self.iou))
        }
        return {
            "pixel_acc": self.pixel_acc,
            "fg_acc": self.fg_acc,
            "per_class": per_class,
            "avg_precision": self.avg_precision,
            "avg_recall": self.avg_recall,
            "avg_f1": self.avg_f1,
            "mean_iou": self.mean_iou,
            "fg_iou": self.fg_iou,
        }


def _mean_or_none(values):
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def evaluate(preds, gts, num_classes):
    """Confusion-matrix evaluation of predicted label maps against ground truth.

    IoU_c = TP / (TP + FP + FN); foreground IoU merges all non-background
    classes into one; fg_acc is accuracy over pixels whose ground truth is
    foreground; precision/recall/F1 averages run over classes 1..C-1.
    """
    if len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        if pred.shape != gt.shape:
            raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
        if pred.min() < 0 or pred.max() >= num_classes or gt.min() < 0 or gt.max() >= num_classes:
            raise LabelError(f"labels outside [0, {num_classes})")
        np.add.at(cm, (gt.ravel(), pred.ravel()), 1)

    total = cm.sum()
    diag = np.diag(cm)
    gt_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)

    precision, recall, f1, iou = [], [], [], []
    for c in range(num_classes):
        tp = int(diag[c])
        fp = int(pred_count[c]) - tp
        fn = int(gt_count[c]) - tp
        if tp + fp + fn == 0:
            precision.append(None)
            recall.append(None)
            f1.append(None)
            iou.append(None)
            continue
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2.0 * p * r / (p + r) if p + r else 0.0)
        iou.append(tp / (tp + fp + fn))

    fg_total = int(gt_count[1:].sum())
    fg_acc = float(diag[1:].sum() / fg_total) if fg_total else None
    fg_inter = int(cm[1:, 1:].sum())
    fg_union = int(total - cm[0, 0])
    fg_iou = fg_inter / fg_union if fg_union else None

    return MetricsReport(
        pixel_acc=float(diag.sum() / total),
        fg_acc=fg_acc,
        precision=precision, recall=recall, f1=f1, iou=iou,
        avg_precision=_mean_or_none(precision[1:]),
        avg_recall=_mean_or_none(recall[1:]),
        avg_f1=_mean_or_none(f1[1:]),
        mean_iou=_mean_or_none(iou),
        fg_iou=fg_iou,
        confusion=cm,
    )
