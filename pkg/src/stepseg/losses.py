"""Pixel-selected classification loss and segmentation quality metrics.

The data-fit term is softmax cross-entropy averaged over labeled pixels.
Quality is per-class intersection-over-union and its mean, computed only
over pixels the ground truth labels (id -1 marks unlabeled).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

UNLABELED = -1


@dataclass(frozen=True)
class ClassMap:
    """Per-pixel integer class ids, UNLABELED (-1) where no truth exists."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        if values.ndim != 2:
            raise ValueError(f"class map must be 2-d, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.values >= 0


def softmax_xent_matrix(logits: np.ndarray, labels: np.ndarray,
                        ) -> tuple[float, np.ndarray]:
    """Loss and gradient with pixels as columns of a (num_classes, n) matrix.

    Returns (loss, grad) with grad = (softmax - onehot) / n, stabilized by
    per-column max subtraction. Raises on n == 0 (mean undefined).
    """
    if logits.ndim != 2:
        raise ValueError(f"logits must be 2-d (num_classes, n), got {logits.shape}")
    num_classes, count = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (count,):
        raise ValueError(f"labels shape {labels.shape} does not match {count} pixels")
    if count == 0:
        raise ValueError("no labeled pixels, mean loss undefined")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("labels out of range")

    shifted = logits - logits.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=0, keepdims=True)
    probs = exp / total
    cols = np.arange(count)
    log_probs = shifted[labels, cols] - np.log(total[0, cols])
    loss = -float(log_probs.sum()) / count

    grad = probs
    grad[labels, cols] -= 1.0
    grad /= count
    return loss, grad


def softmax_xent(selected: Sequence[tuple[np.ndarray, int]],
                 ) -> tuple[float, list[np.ndarray]]:
    """Loss and per-entry gradient vectors for (logit-vector, class_id) pairs."""
    if len(selected) == 0:
        raise ValueError("no labeled pixels, mean loss undefined")
    logits = np.stack([np.asarray(vec, dtype=np.float64)
                       for vec, _ in selected], axis=1)
    labels = np.array([class_id for _, class_id in selected], dtype=np.int64)
    loss, grad = softmax_xent_matrix(logits, labels)
    return loss, [grad[:, i] for i in range(grad.shape[1])]


@dataclass(frozen=True)
class ClassIoU:
    """Intersection/union pixel counts for one class."""

    class_id: int
    intersection: int
    union: int

    @property
    def iou(self) -> Optional[float]:
        """None when the class appears in neither prediction nor truth."""
        if self.union == 0:
            return None
        return self.intersection / self.union


@dataclass(frozen=True)
class IoUReport:
    """All per-class counts plus the mean over classes with defined IoU.

    miou is 0.0 when no class has a nonempty union.
    """

    per_class: tuple[ClassIoU, ...]
    miou: float

    def csv(self, alpha: Union[float, str] = "") -> str:
        """Rows alpha,class_id,iou,miou for every class with a defined IoU."""
        prefix = repr(alpha) if isinstance(alpha, float) else str(alpha)
        buf = io.StringIO()
        buf.write("alpha,class_id,iou,miou\n")
        for entry in self.per_class:
            if entry.iou is None:
                continue
            buf.write(f"{prefix},{entry.class_id},{repr(entry.iou)},"
                      f"{repr(self.miou)}\n")
        return buf.getvalue()


def _map_values(m: Union[ClassMap, np.ndarray]) -> np.ndarray:
    return m.values if isinstance(m, ClassMap) else np.asarray(m)


def iou(pred: Union[ClassMap, np.ndarray], truth: Union[ClassMap, np.ndarray],
        num_classes: Optional[int] = None) -> IoUReport:
    """Per-class IoU over the pixels where truth is labeled.

    num_classes defaults to 1 + the largest id seen in either map.
    """
    p = _map_values(pred)
    t = _map_values(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    mask = t >= 0
    p = p[mask]
    t = t[mask]
    if num_classes is None:
        num_classes = int(max(p.max(), t.max())) + 1 if p.size else 0
    per_class = []
    defined = []
    for c in range(num_classes):
        in_p = p == c
        in_t = t == c
        union = int(np.count_nonzero(in_p | in_t))
        inter = int(np.count_nonzero(in_p & in_t))
        entry = ClassIoU(class_id=c, intersection=inter, union=union)
        per_class.append(entry)
        if entry.iou is not None:
            defined.append(entry.iou)
    miou = sum(defined) / len(defined) if defined else 0.0
    return IoUReport(per_class=tuple(per_class), miou=miou)
