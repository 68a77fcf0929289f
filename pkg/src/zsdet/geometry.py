"""Center-size boxes, IoU, Faster R-CNN style offsets and greedy NMS.

Arrays of boxes have shape (N, 4) with columns (x, y, w, h), (x, y) being
the box center.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

MAX_LOG_SCALE = 4.0


class Box(NamedTuple):
    x: float
    y: float
    w: float
    h: float

    def validate(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive: {self}")
        if not all(np.isfinite(self)):
            raise ValueError(f"non-finite box: {self}")
        return self


class OffsetTarget(NamedTuple):
    tx: float
    ty: float
    tw: float
    th: float


def to_corners(boxes):
    b = np.asarray(boxes, dtype=np.float64)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def from_corners(corners):
    c = np.asarray(corners, dtype=np.float64)
    wh = c[..., 2:] - c[..., :2]
    return np.concatenate([c[..., :2] + wh / 2, wh], axis=-1)


def pairwise_iou(a, b):
    """IoU matrix between box arrays ``a`` (N, 4) and ``b`` (M, 4)."""
    ca = to_corners(np.atleast_2d(a))
    cb = to_corners(np.atleast_2d(b))
    lt = np.maximum(ca[:, None, :2], cb[None, :, :2])
    rb = np.minimum(ca[:, None, 2:], cb[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (ca[:, 2] - ca[:, 0]) * (ca[:, 3] - ca[:, 1])
    area_b = (cb[:, 2] - cb[:, 0]) * (cb[:, 3] - cb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou(a, b) -> float:
    return float(pairwise_iou(np.asarray(a, dtype=np.float64)[None], np.asarray(b, dtype=np.float64)[None])[0, 0])


def encode_offsets(proposals, gts):
    """Regression targets taking ``proposals`` onto ``gts`` (broadcasts over rows)."""
    p = np.asarray(proposals, dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64)
    t = np.empty(np.broadcast(p, g).shape)
    t[..., 0] = (g[..., 0] - p[..., 0]) / p[..., 2]
    t[..., 1] = (g[..., 1] - p[..., 1]) / p[..., 3]
    t[..., 2] = np.log(g[..., 2] / p[..., 2])
    t[..., 3] = np.log(g[..., 3] / p[..., 3])
    return t


def decode_offsets(proposals, offsets):
    """Inverse of :func:`encode_offsets`; log-scale terms are clipped to
    +-4 before exponentiation."""
    p = np.asarray(proposals, dtype=np.float64)
    t = np.asarray(offsets, dtype=np.float64)
    out = np.empty(np.broadcast(p, t).shape)
    out[..., 0] = p[..., 0] + t[..., 0] * p[..., 2]
    out[..., 1] = p[..., 1] + t[..., 1] * p[..., 3]
    out[..., 2] = p[..., 2] * np.exp(np.clip(t[..., 2], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    out[..., 3] = p[..., 3] * np.exp(np.clip(t[..., 3], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    return out


def nms(boxes, scores, iou_threshold: float):
    """Greedy NMS. Returns kept indices in descending score order; equal
    scores keep the lower index first. A box is suppressed when its IoU with
    an already kept box is strictly greater than ``iou_threshold``."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError("boxes and scores differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = np.argsort(-scores, kind="stable")
    if order.size == 0:
        return order
    ious = pairwise_iou(boxes, boxes)
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > iou_threshold
    return np.asarray(keep, dtype=np.int64)
