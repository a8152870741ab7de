"""Toy-scale training: losses, SGD with momentum, synthetic data, metrics.

The loss is the weighted compound 0.6 * dice + 0.4 * binary cross entropy,
both computed per class one-vs-rest and macro-averaged. The synthetic task
rasterizes anti-aliased ellipses and rectangles whose intensity bands are
separable from the background, so a correct model should segment them
quickly; masks are exact (hard) labels.
"""

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import _kernels
from .architecture import Model, ModelConfig
from .numerics import ShapeError, Tape, Tensor, rng
from .numerics import ops

DICE_WEIGHT = 0.6
CE_WEIGHT = 0.4
CE_FLOOR = 1e-7


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _as_class_matrix(t):
    """Flatten to (pixels, classes); 1-D input is a single class column."""
    if t.ndim == 1:
        return ops.reshape(t, (t.size, 1))
    return ops.reshape(t, (-1, t.shape[-1]))


def dice_loss(y, p):
    """Soft dice with +1 smoothing: 1 - (2 sum(y p) + 1) / (sum y + sum p + 1).

    Sums run over pixels per class (last axis when 2-D or higher); the
    per-class values are macro-averaged. Symmetric in y and p.
    """
    if y.shape != p.shape:
        raise ShapeError(f"dice_loss: {y.shape} vs {p.shape}")
    if p.data.min() < 0.0 or p.data.max() > 1.0:
        raise ValueError("dice_loss: probabilities outside [0, 1]")
    ym, pm = _as_class_matrix(y), _as_class_matrix(p)
    inter = ops.sum_axis(ops.mul(ym, pm), 0)
    total = ops.add(ops.sum_axis(ym, 0), ops.sum_axis(pm, 0))
    frac = ops.div(ops.affine(inter, 2.0, 1.0), ops.affine(total, 1.0, 1.0))
    return ops.mean_all(ops.affine(frac, -1.0, 1.0))


def ce_loss(y, yhat):
    """Per-class one-vs-rest binary cross entropy, mean over pixels/classes.

    Each log argument is floored at 1e-7 (equivalently yhat is clamped into
    [1e-7, 1 - 1e-7] per term), so perfect predictions cost exactly zero.
    """
    if y.shape != yhat.shape:
        raise ShapeError(f"ce_loss: {y.shape} vs {yhat.shape}")
    pos = ops.mul(y, ops.log(ops.clamp(yhat, lo=CE_FLOOR)))
    neg = ops.mul(ops.affine(y, -1.0, 1.0),
                  ops.log(ops.clamp(ops.affine(yhat, -1.0, 1.0), lo=CE_FLOOR)))
    return ops.affine(ops.mean_all(ops.add(pos, neg)), -1.0)


def total_loss(y, p):
    """0.6 * dice + 0.4 * cross entropy (returns all three as tensors)."""
    dice = dice_loss(y, p)
    ce = ce_loss(y, p)
    total = ops.add(ops.affine(dice, DICE_WEIGHT), ops.affine(ce, CE_WEIGHT))
    return total, dice, ce


def one_hot(mask, num_classes):
    """Int labels of any shape -> (..., num_classes) float indicator."""
    flat = np.asarray(mask).reshape(-1)
    if flat.min() < 0 or flat.max() >= num_classes:
        raise ShapeError(f"labels outside [0, {num_classes})")
    eye = np.eye(num_classes, dtype=np.float64)
    return Tensor(eye[flat].reshape(*np.asarray(mask).shape, num_classes))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    velocities: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_store(cls, store):
        return cls({name: np.zeros_like(t.data) for name, t in store.items()})


def sgd_step(store, state, lr, momentum=0.9, weight_decay=1e-4):
    """v <- momentum v + (g + weight_decay w); w <- w - lr v."""
    for name, t in store.items():
        g = t.grad if t.grad is not None else 0.0
        v = state.velocities[name]
        v *= momentum
        v += g + weight_decay * t.data
        t.data -= lr * v
    state.step += 1


# ---------------------------------------------------------------------------
# synthetic segmentation task
# ---------------------------------------------------------------------------

@dataclass
class SegBatch:
    images: np.ndarray  # (B, H, W, C) float64
    masks: np.ndarray   # (B, H, W) integer labels
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.masks.ndim != 3:
            raise ShapeError(f"batch shapes {self.images.shape} / "
                             f"{self.masks.shape}")
        if self.images.shape[:3] != self.masks.shape:
            raise ShapeError("image/mask extents differ: "
                             f"{self.images.shape} vs {self.masks.shape}")
        if self.masks.min() < 0 or self.masks.max() >= self.num_classes:
            raise ShapeError(f"mask labels outside [0, {self.num_classes})")

    def __len__(self):
        return self.images.shape[0]


def synth_task(seed, size, num_shapes=3, num_classes=2, batch_size=8):
    """Deterministic batch of anti-aliased shape images with exact masks.

    Shapes cycle through the non-background classes, each class with its
    own intensity band well above the background, so every class appears
    given enough shapes and the task is learnable from intensity + context.
    """
    gen = rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((batch_size, size, size, 1))
    masks = np.zeros((batch_size, size, size), dtype=np.int64)
    for b in range(batch_size):
        img = gen.uniform(0.03, 0.10) + gen.normal(0.0, 0.02, size=(size, size))
        mask = masks[b]
        for s in range(num_shapes):
            cls = 1 + s % (num_classes - 1)
            level = 0.55 + 0.4 * cls / (num_classes - 1)
            intensity = level + gen.uniform(-0.05, 0.05)
            cx, cy = gen.uniform(0.25 * size, 0.75 * size, size=2)
            if gen.uniform() < 0.5:
                rx, ry = gen.uniform(0.18 * size, 0.38 * size, size=2)
                dist = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
                signed = (dist - 1.0) * min(rx, ry)
            else:
                hx, hy = gen.uniform(0.16 * size, 0.34 * size, size=2)
                signed = np.maximum(np.abs(xx - cx) - hx, np.abs(yy - cy) - hy)
            alpha = np.clip(0.5 - signed, 0.0, 1.0)
            img = img * (1.0 - alpha) + intensity * alpha
            mask[signed <= 0.0] = cls
        images[b, :, :, 0] = np.clip(img, 0.0, 1.0)
    return SegBatch(images=images, masks=masks, num_classes=num_classes)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    dsc: float
    sensitivity: float
    specificity: float
    accuracy: float
    hausdorff: float

    def __post_init__(self):
        for name in ("dsc", "sensitivity", "specificity", "accuracy"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} = {v} outside [0, 1]")
        if self.hausdorff < 0.0:
            raise ValueError(f"hausdorff = {self.hausdorff} negative")


def _boundary_points(region):
    """Coordinates of region pixels with a 4-neighbor outside the region."""
    padded = np.zeros((region.shape[0] + 2, region.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = region
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(region & ~interior).astype(np.float64)


def hausdorff_distance(pred_region, true_region):
    """Symmetric Hausdorff distance between two boundary pixel sets."""
    a = _boundary_points(pred_region)
    b = _boundary_points(true_region)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("hausdorff needs non-empty regions")
    return max(_kernels.hausdorff_directed(a, b),
               _kernels.hausdorff_directed(b, a))


def segmentation_metrics(pred, true, num_classes):
    """Per-class rows and the macro MetricReport for a batch of label maps.

    Confusion counts are pooled over the batch per class. A class absent
    from both prediction and truth is excluded from every average; the
    Hausdorff column is averaged only over classes present in both (per
    image, over images where both regions exist).
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError(f"metrics: {pred.shape} vs {true.shape}")
    if pred.ndim == 2:
        pred, true = pred[None], true[None]
    total = pred.size
    rows = []
    for c in range(num_classes):
        p = pred == c
        t = true == c
        if not p.any() and not t.any():
            continue
        tp = int((p & t).sum())
        fp = int((p & ~t).sum())
        fn = int((~p & t).sum())
        tn = total - tp - fp - fn
        dsc = 2.0 * tp / (2.0 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        se = tp / (tp + fn) if (tp + fn) else 0.0
        sp = tn / (tn + fp) if (tn + fp) else 0.0
        acc = (tp + tn) / total
        hds = [hausdorff_distance(p[i], t[i])
               for i in range(pred.shape[0]) if p[i].any() and t[i].any()]
        rows.append({"class": c, "dsc": dsc, "se": se, "sp": sp, "acc": acc,
                     "hd": float(np.mean(hds)) if hds else None})
    if not rows:
        raise ValueError("no class present in prediction or truth")
    hd_values = [r["hd"] for r in rows if r["hd"] is not None]
    report = MetricReport(
        dsc=float(np.mean([r["dsc"] for r in rows])),
        sensitivity=float(np.mean([r["se"] for r in rows])),
        specificity=float(np.mean([r["sp"] for r in rows])),
        accuracy=float(np.mean([r["acc"] for r in rows])),
        hausdorff=float(np.mean(hd_values)) if hd_values else float("inf"),
    )
    return rows, report


def predict_labels(model, images):
    """Argmax class map for each image in (B, H, W, C)."""
    out = np.empty(images.shape[:3], dtype=np.int64)
    for i in range(images.shape[0]):
        logits = model.forward(Tensor(images[i]))
        out[i] = logits.data.argmax(axis=2)
    return out


def evaluate(model, batch):
    """Macro MetricReport of the model on one batch."""
    _, report = evaluate_detailed(model, batch)
    return report


def evaluate_detailed(model, batch):
    pred = predict_labels(model, batch.images)
    return segmentation_metrics(pred, batch.masks, batch.num_classes)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 500
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    num_shapes: int = 3
    eval_images: int = 16
    eval_every: int = 25
    target_dsc: Optional[float] = None


@dataclass
class TrainResult:
    model: Model
    history: List[dict]
    report: MetricReport
    per_class: List[dict]
    final_step: int


EVAL_SEED_OFFSET = 1_000_003


def _batch_seed(base_seed, step):
    return (base_seed << 21) + step


def heldout_batch(cfg):
    """Evaluation data drawn from a seed stream disjoint from training."""
    return synth_task(_batch_seed(cfg.model.seed, EVAL_SEED_OFFSET),
                      cfg.model.image_size, cfg.num_shapes,
                      cfg.model.num_classes, cfg.eval_images)


def train_step(model, state, batch, lr, momentum, weight_decay):
    """One SGD update on a batch; returns (total, dice, ce) floats."""
    b = len(batch)
    hw = model.config.image_size ** 2
    k = model.config.num_classes
    with Tape() as tape:
        dice_sum, ce_sum = None, None
        for i in range(b):
            logits = model.forward(Tensor(batch.images[i]))
            probs = ops.softmax(ops.reshape(logits, (hw, k)), axis=1)
            y = one_hot(batch.masks[i].reshape(-1), k)
            d = dice_loss(y, probs)
            e = ce_loss(y, probs)
            dice_sum = d if dice_sum is None else ops.add(dice_sum, d)
            ce_sum = e if ce_sum is None else ops.add(ce_sum, e)
        dice = ops.affine(dice_sum, 1.0 / b)
        ce = ops.affine(ce_sum, 1.0 / b)
        total = ops.add(ops.affine(dice, DICE_WEIGHT), ops.affine(ce, CE_WEIGHT))
        tape.backward(total)
    sgd_step(model.store, state, lr, momentum, weight_decay)
    model.store.zero_grads()
    return total.item(), dice.item(), ce.item()


def train(cfg):
    """Train a fresh model on the synthetic task; deterministic per seed.

    Evaluates on held-out batches every ``eval_every`` steps and stops
    early once ``target_dsc`` (if set) is reached.
    """
    model = Model(cfg.model)
    state = TrainState.for_store(model.store)
    eval_batch = heldout_batch(cfg)
    history = []
    final_step = cfg.steps
    for step in range(cfg.steps):
        batch = synth_task(_batch_seed(cfg.model.seed, step),
                           cfg.model.image_size, cfg.num_shapes,
                           cfg.model.num_classes, cfg.batch_size)
        total, dice, ce = train_step(model, state, batch, cfg.lr,
                                     cfg.momentum, cfg.weight_decay)
        history.append({"step": step, "loss_total": total, "loss_dice": dice,
                        "loss_ce": ce, "lr": cfg.lr})
        if cfg.target_dsc is not None and (step + 1) % cfg.eval_every == 0:
            if evaluate(model, eval_batch).dsc >= cfg.target_dsc:
                final_step = step + 1
                break
    per_class, report = evaluate_detailed(model, eval_batch)
    return TrainResult(model=model, history=history, report=report,
                       per_class=per_class, final_step=final_step)


# ---------------------------------------------------------------------------
# CSV reports
# ---------------------------------------------------------------------------

TRAIN_LOG_HEADER = ["step", "loss_total", "loss_dice", "loss_ce", "lr"]
EVAL_REPORT_HEADER = ["class", "dsc", "se", "sp", "acc", "hd"]


def write_train_log(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAIN_LOG_HEADER)
        writer.writeheader()
        for row in history:
            writer.writerow({k: _fmt(row[k]) for k in TRAIN_LOG_HEADER})


def write_eval_report(path, per_class):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_REPORT_HEADER)
        writer.writeheader()
        for row in per_class:
            writer.writerow({k: _fmt(row[k]) for k in EVAL_REPORT_HEADER})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12g}"
    return v
