"""Detection metrics: greedy matching, Recall@K, 11-point AP, subset mAP
and the GZSD harmonic mean."""
from __future__ import annotations

import csv
import json
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .geometry import pairwise_iou
from .inference import Detection, mode_classes
from .semantics import ClassVocabulary


class NoGroundTruthWarning(UserWarning):
    pass


@dataclass
class GroundTruth:
    boxes: np.ndarray   # (k, 4)
    labels: np.ndarray  # (k,)


def match_detections(dets: Sequence[Detection], gt: GroundTruth, iou_threshold: float):
    """TP flags for one image's detections (taken in the given order, which
    should be by descending score). A detection claims the highest-IoU
    still-unmatched GT of its class when that IoU is >= threshold.

    Returns ``(flags, matched_gt)`` where ``matched_gt[k]`` is the GT index
    claimed by detection ``k`` or -1.
    """
    n = len(dets)
    flags = np.zeros(n, dtype=bool)
    claimed = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(gt.labels) == 0:
        return flags, claimed
    ious = pairwise_iou(np.array([d.box for d in dets]), gt.boxes)
    used = np.zeros(len(gt.labels), dtype=bool)
    for k, d in enumerate(dets):
        cand = (gt.labels == d.label) & ~used & (ious[k] >= iou_threshold)
        if not cand.any():
            continue
        j = int(np.argmax(np.where(cand, ious[k], -1.0)))
        used[j] = True
        flags[k] = True
        claimed[k] = j
    return flags, claimed


def _by_score(dets):
    return sorted(dets, key=lambda d: -d.score)


def recall_at_k(dets_per_image: Mapping[str, Sequence[Detection]],
                gts: Mapping[str, GroundTruth], k: int = 100, iou_threshold: float = 0.5,
                classes=None) -> float:
    """Fraction of GT objects matched by the top-``k`` detections of their
    image. ``classes`` optionally restricts which GT objects count."""
    n_gt = 0
    hit = 0
    for image_id, gt in gts.items():
        keep = np.ones(len(gt.labels), dtype=bool) if classes is None else np.isin(gt.labels, classes)
        n_gt += int(keep.sum())
        top = _by_score(dets_per_image.get(image_id, []))[:k]
        _, claimed = match_detections(top, gt, iou_threshold)
        hit += int(keep[claimed[claimed >= 0]].sum())
    return hit / n_gt if n_gt else 0.0


def average_precision_11pt(flags, scores, n_gt: int) -> float:
    """Mean over recall levels 0, 0.1, ..., 1 of the best precision reached
    at recall >= level (0 where the level is never reached)."""
    flags = np.asarray(flags, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if n_gt <= 0:
        warnings.warn("AP requested for a class with no ground truth", NoGroundTruthWarning, stacklevel=2)
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    if tp.size == 0:
        return 0.0
    rec = tp / n_gt
    prec = tp / (tp + fp)
    total = 0.0
    for i in range(11):
        reach = rec >= i / 10
        total += prec[reach].max() if reach.any() else 0.0
    return total / 11


def harmonic_mean(s: float, u: float) -> float:
    return 2 * s * u / (s + u) if s + u > 0 else 0.0


@dataclass
class EvalReport:
    mode: str
    iou_thresholds: List[float]
    recall_at_100: Dict[str, float]
    ap: Dict[str, Dict[str, float]]          # iou -> class name -> AP
    map_all: Dict[str, float]
    map_seen: Dict[str, float] = field(default_factory=dict)
    map_unseen: Dict[str, float] = field(default_factory=dict)
    harmonic_mean: Dict[str, float] = field(default_factory=dict)
    n_gt: Dict[str, int] = field(default_factory=dict)
    n_detections: int = 0
    classes_without_gt: List[str] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_class_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class_name", "iou_threshold", "ap", "n_gt"])
            for thr in self.iou_thresholds:
                for name, ap in self.ap[_key(thr)].items():
                    w.writerow([name, thr, f"{ap:.6f}", self.n_gt.get(name, 0)])


def _key(thr: float) -> str:
    return f"{thr:g}"


def class_ap(dets_per_image, gts, label: int, iou_threshold: float) -> float:
    flags, scores, n_gt = [], [], 0
    for gt in gts.values():
        n_gt += int((gt.labels == label).sum())
    # fixed image order keeps score ties independent of input ordering
    for image_id in sorted(dets_per_image):
        dets = dets_per_image[image_id]
        mine = _by_score([d for d in dets if d.label == label])
        if not mine:
            continue
        gt = gts.get(image_id, GroundTruth(np.zeros((0, 4)), np.zeros(0, np.int64)))
        f, _ = match_detections(mine, gt, iou_threshold)
        flags.extend(f)
        scores.extend(d.score for d in mine)
    return average_precision_11pt(flags, scores, n_gt)


def build_report(dets_per_image: Mapping[str, Sequence[Detection]], gts: Mapping[str, GroundTruth],
                 vocab: ClassVocabulary, iou_thresholds=(0.5,), mode: str = "gzsd") -> EvalReport:
    """Per-class AP and subset means over the mode's label space
    (seen classes, unseen classes, or both with their harmonic mean)."""
    classes = mode_classes(vocab, mode)
    for image_id, dets in dets_per_image.items():
        for d in dets:
            if not 0 < d.label < vocab.n_classes:
                raise ValueError(f"detection in {image_id} has unknown class {d.label}")
    n_gt = defaultdict(int)
    for gt in gts.values():
        for lab in gt.labels:
            n_gt[vocab.names[lab]] += 1
    report = EvalReport(mode=mode, iou_thresholds=[float(t) for t in iou_thresholds],
                        recall_at_100={}, ap={}, map_all={},
                        n_gt={vocab.names[c]: n_gt.get(vocab.names[c], 0) for c in classes},
                        n_detections=sum(len(v) for v in dets_per_image.values()))
    report.classes_without_gt = [vocab.names[c] for c in classes if n_gt.get(vocab.names[c], 0) == 0]
    seen = set(vocab.seen_indices.tolist())
    for thr in iou_thresholds:
        key = _key(thr)
        aps = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoGroundTruthWarning)
            for c in classes:
                aps[int(c)] = class_ap(dets_per_image, gts, int(c), thr)
        report.ap[key] = {vocab.names[c]: v for c, v in aps.items()}
        scored = [c for c in aps if vocab.names[c] not in report.classes_without_gt]
        report.map_all[key] = float(np.mean([aps[c] for c in scored])) if scored else 0.0
        report.recall_at_100[key] = recall_at_k(dets_per_image, gts, 100, thr, classes)
        s_cls = [c for c in scored if c in seen]
        u_cls = [c for c in scored if c not in seen]
        if mode in ("seen", "gzsd"):
            report.map_seen[key] = float(np.mean([aps[c] for c in s_cls])) if s_cls else 0.0
        if mode in ("zsd", "gzsd"):
            report.map_unseen[key] = float(np.mean([aps[c] for c in u_cls])) if u_cls else 0.0
        if mode == "gzsd":
            report.harmonic_mean[key] = harmonic_mean(report.map_seen[key], report.map_unseen[key])
    return report
