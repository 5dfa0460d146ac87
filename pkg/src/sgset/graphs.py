"""Scene-graph data types and plain-numpy box arithmetic.

Boxes are normalized center-size (cx, cy, w, h), all in [0, 1]; numpy helpers
convert to corner form internally. Tensor-typed (differentiable) box math
lives in matching.py; everything here is float bookkeeping shared by the
dataset, matching, and metrics modules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOX_MIN_EXTENT = 1e-7  # width/height floor applied before any ratio


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @staticmethod
    def from_corners(x1: float, y1: float, x2: float, y2: float) -> "Box":
        if x2 < x1 or y2 < y1:
            raise ValueError(f"degenerate corner box ({x1},{y1},{x2},{y2})")
        return Box((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @property
    def area(self) -> float:
        return self.w * self.h


def union_box(a: Box, b: Box) -> Box:
    """Smallest box enclosing both (the ground-truth box of a predicate)."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    return Box.from_corners(min(ax1, bx1), min(ay1, by1),
                            max(ax2, bx2), max(ay2, by2))


@dataclass(frozen=True)
class Triplet:
    subject_label: int
    subject_box: Box
    predicate_label: int
    object_label: int
    object_box: Box
    predicate_box: Box

    @staticmethod
    def make(subject_label: int, subject_box: Box, predicate_label: int,
             object_label: int, object_box: Box) -> "Triplet":
        return Triplet(subject_label, subject_box, predicate_label,
                       object_label, object_box,
                       union_box(subject_box, object_box))

    def label_triple(self) -> tuple[int, int, int]:
        """(subject, predicate, object) labels; the zero-shot identity key."""
        return (self.subject_label, self.predicate_label, self.object_label)


@dataclass
class GroundTruthGraph:
    triplets: list[Triplet]

    @property
    def m(self) -> int:
        return len(self.triplets)

    def boxes(self, task: str) -> np.ndarray:
        attr = {"s": "subject_box", "o": "object_box", "p": "predicate_box"}[task]
        return boxes_array([getattr(t, attr) for t in self.triplets])

    def labels(self, task: str) -> np.ndarray:
        attr = {"s": "subject_label", "o": "object_label",
                "p": "predicate_label"}[task]
        return np.array([getattr(t, attr) for t in self.triplets], dtype=np.int64)


# -- numpy box math ------------------------------------------------------


def boxes_array(boxes: list[Box]) -> np.ndarray:
    """list of Box -> (n, 4) float64 cxcywh."""
    if not boxes:
        return np.empty((0, 4), dtype=np.float64)
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=np.float64)


def cxcywh_to_xyxy(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    half = arr[..., 2:] / 2
    return np.concatenate([arr[..., :2] - half, arr[..., :2] + half], axis=-1)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of cxcywh box arrays: (n, 4) x (m, 4) -> (n, m)."""
    ax = cxcywh_to_xyxy(a)[:, None, :]
    bx = cxcywh_to_xyxy(b)[None, :, :]
    lt = np.maximum(ax[..., :2], bx[..., :2])
    rb = np.minimum(ax[..., 2:], bx[..., 2:])
    inter = np.prod(np.clip(rb - lt, 0.0, None), axis=-1)
    area_a = np.prod(np.clip(ax[..., 2:] - ax[..., :2], BOX_MIN_EXTENT, None), axis=-1)
    area_b = np.prod(np.clip(bx[..., 2:] - bx[..., :2], BOX_MIN_EXTENT, None), axis=-1)
    return inter / (area_a + area_b - inter)


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU of cxcywh arrays: (n, 4) x (m, 4) -> (n, m).

    GIoU = IoU - (hull - union) / hull, where hull is the area of the smallest
    box enclosing both. Extents are floored at BOX_MIN_EXTENT first.
    """
    a = np.asarray(a, dtype=np.float64).copy()
    b = np.asarray(b, dtype=np.float64).copy()
    a[..., 2:] = np.clip(a[..., 2:], BOX_MIN_EXTENT, None)
    b[..., 2:] = np.clip(b[..., 2:], BOX_MIN_EXTENT, None)
    ax = cxcywh_to_xyxy(a)[:, None, :]
    bx = cxcywh_to_xyxy(b)[None, :, :]
    lt = np.maximum(ax[..., :2], bx[..., :2])
    rb = np.minimum(ax[..., 2:], bx[..., 2:])
    inter = np.prod(np.clip(rb - lt, 0.0, None), axis=-1)
    area_a = np.prod(ax[..., 2:] - ax[..., :2], axis=-1)
    area_b = np.prod(bx[..., 2:] - bx[..., :2], axis=-1)
    union = area_a + area_b - inter
    hull_lt = np.minimum(ax[..., :2], bx[..., :2])
    hull_rb = np.maximum(ax[..., 2:], bx[..., 2:])
    hull = np.prod(hull_rb - hull_lt, axis=-1)
    return inter / union - (hull - union) / hull
