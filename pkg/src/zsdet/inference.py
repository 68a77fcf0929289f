"""Test-time detection: score fusion, label-space filtering, box decoding
and class-wise NMS. Also the mapping-transfer (ConSE-style) baseline."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np

from .geometry import decode_offsets, nms
from .model import ModelConfig, ModelParams, assemble_class_matrix, forward_infer
from .semantics import ClassVocabulary, SemanticTable

MODES = ("seen", "zsd", "gzsd")


@dataclass(frozen=True)
class Detection:
    box: tuple          # (x, y, w, h)
    label: int
    score: float
    mode: str
    image_id: str = ""


def fuse_scores(o_s, o_u, S):
    """(o_u @ S.T) * o_s, row-wise for batches."""
    o_s = np.asarray(o_s, dtype=np.float64)
    o_u = np.asarray(o_u, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if o_s.shape[-1] != S.shape[0] or o_u.shape[-1] != S.shape[1]:
        raise ValueError(f"o_s {o_s.shape}, o_u {o_u.shape} do not match S {S.shape}")
    return (o_u @ S.T) * o_s


def mode_classes(vocab: ClassVocabulary, mode: str) -> np.ndarray:
    if mode == "seen":
        return vocab.seen_indices
    if mode == "zsd":
        return vocab.unseen_indices
    if mode == "gzsd":
        return np.arange(1, vocab.n_classes)
    raise ValueError(f"unknown mode {mode!r}")


def detect(params: ModelParams, config: ModelConfig, proposals, features, table: SemanticTable,
           vocab: ClassVocabulary, S, mode: str = "gzsd", score_threshold: float = 0.001,
           nms_threshold: float = 0.5, image_id: str = "") -> List[Detection]:
    """Detections for one image, sorted by descending score.

    Each proposal keeps only its best class within the mode's label space.
    Background is never a candidate.
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    if proposals.shape[0] == 0:
        return []
    A = assemble_class_matrix(table, params.a_0)
    o_s, o_u, offsets = forward_infer(params, config, features, A, vocab)
    fused = fuse_scores(o_s, o_u, S)
    allowed = mode_classes(vocab, mode)
    sub = fused[:, allowed]
    best = np.argmax(sub, axis=1)
    labels = allowed[best]
    scores = sub[np.arange(len(sub)), best]
    boxes = decode_offsets(proposals, offsets)
    dets = []
    for c in np.unique(labels):
        idx = np.flatnonzero((labels == c) & (scores >= score_threshold))
        if idx.size == 0:
            continue
        for k in nms(boxes[idx], scores[idx], nms_threshold):
            i = idx[k]
            dets.append(Detection(tuple(map(float, boxes[i])), int(c), float(scores[i]), mode, image_id))
    dets.sort(key=lambda d: -d.score)
    return dets


def detections_to_jsonl(dets: Iterable[Detection], vocab: ClassVocabulary) -> str:
    lines = [json.dumps({"image_id": d.image_id, "class_name": vocab.names[d.label],
                         "score": d.score, "box": list(d.box)}) for d in dets]
    return "".join(line + "\n" for line in lines)


def detections_from_jsonl(text: str, vocab: ClassVocabulary, mode: str = "") -> List[Detection]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        out.append(Detection(tuple(r["box"]), vocab.index(r["class_name"]), float(r["score"]),
                             mode, r["image_id"]))
    return out


def fit_mapping_transfer(features, labels, table: SemanticTable, vocab: ClassVocabulary,
                         ridge: float = 1e-2):
    """Ridge-regression projection W_p (d_r x d_c) from foreground seen-class
    features onto their class embeddings."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    fg = (labels > 0) & (labels <= vocab.n_seen)
    X = features[fg]
    Y = table.embeddings[labels[fg] - 1]
    d = X.shape[1]
    return np.linalg.solve(X.T @ X + ridge * np.eye(d), X.T @ Y)


def conse_baseline_predict(features, projection, table: SemanticTable, vocab: ClassVocabulary):
    """Most compatible unseen class (vocabulary index) for each region under
    cosine compatibility of the projected feature. Ties go to the lower index."""
    P = np.asarray(features, dtype=np.float64) @ np.asarray(projection, dtype=np.float64)
    P = P / np.maximum(np.linalg.norm(P, axis=1, keepdims=True), 1e-12)
    U = table.embeddings[vocab.n_seen:]
    compat = P @ U.T
    return vocab.unseen_indices[np.argmax(compat, axis=1)]
