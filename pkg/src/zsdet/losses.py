"""Training objectives. Each loss returns ``(value, gradient)`` with the
gradient taken with respect to the loss's first argument."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

PROB_CLAMP = 1e-7


@dataclass
class LossBreakdown:
    reg: float
    cls_seen: float
    cls_unseen: float
    con_region: float
    total: float

    def to_dict(self):
        return asdict(self)


def _log_softmax(x):
    x = x - x.max(axis=1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def seen_classification_loss(logits, labels):
    """Mean softmax cross-entropy over regions; labels index columns
    (0 = background, 1..n_s = seen)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per region")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k - 1}]")
    if n == 0:
        return 0.0, np.zeros_like(logits)
    logp = _log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def unseen_alignment_loss(probs, labels, S):
    """Binary cross-entropy between unseen-path probabilities and the
    similarity rows ``S[labels]``: summed over unseen classes, averaged over
    regions (the same per-region normalization as the seen cross-entropy).

    Background regions (label 0) get the all-zero row of ``S``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(probs)) or probs.min(initial=0.5) < 0 or probs.max(initial=0.5) > 1:
        raise ValueError("unseen probabilities must lie in [0, 1]")
    target = np.asarray(S, dtype=np.float64)[labels]
    if target.shape != probs.shape:
        raise ValueError(f"targets {target.shape} vs probabilities {probs.shape}")
    if probs.size == 0:
        return 0.0, np.zeros_like(probs)
    p = np.clip(probs, PROB_CLAMP, 1 - PROB_CLAMP)
    n = probs.shape[0]
    loss = -(target * np.log(p) + (1 - target) * np.log1p(-p)).sum() / n
    grad = (p - target) / (p * (1 - p)) / n
    grad[(probs < PROB_CLAMP) | (probs > 1 - PROB_CLAMP)] = 0.0
    return float(loss), grad


def region_contrastive_loss(Z, labels, tau: float = 0.1, include_background: bool = True,
                            norm_tol: float = 1e-6):
    """Supervised contrastive loss over region embeddings.

    For anchor i with positives P(i) (same label, j != i) the per-pair term is
    ``-log(exp(z_i.z_j/tau) / sum_{k != i} exp(z_i.z_k/tau))``; each anchor
    averages over its positives, and the result is averaged over anchors that
    have at least one positive. With ``include_background=False`` regions
    labelled 0 are dropped before pairing.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if Z.shape[0] and np.max(np.abs(np.linalg.norm(Z, axis=1) - 1.0)) > norm_tol:
        raise ValueError("contrastive embeddings must be unit norm")
    grad = np.zeros_like(Z)
    keep = np.ones(len(labels), dtype=bool) if include_background else labels != 0
    Zk, lk = Z[keep], labels[keep]
    n = Zk.shape[0]
    if n < 2:
        return 0.0, grad
    sim = Zk @ Zk.T / tau
    eye = np.eye(n, dtype=bool)
    pos = (lk[:, None] == lk[None, :]) & ~eye
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0
    n_anchor = int(anchors.sum())
    if n_anchor == 0:
        return 0.0, grad
    masked = np.where(eye, -np.inf, sim)
    m = masked.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(masked - m).sum(axis=1))
    per_anchor = np.zeros(n)
    per_anchor[anchors] = (lse[anchors] * n_pos[anchors] - (sim * pos).sum(axis=1)[anchors]) / n_pos[anchors]
    loss = per_anchor[anchors].sum() / n_anchor

    soft = np.exp(masked - lse[:, None])
    G = np.zeros((n, n))
    G[anchors] = soft[anchors] - pos[anchors] / n_pos[anchors, None]
    G /= n_anchor
    grad[keep] = (G + G.T) @ Zk / tau
    return float(loss), grad


def smooth_l1(x):
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def box_regression_loss(pred, target, labels):
    """Smooth-L1 summed over the 4 coordinates of foreground regions, divided
    by the foreground count. Background rows contribute nothing."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    fg = np.asarray(labels) > 0
    grad = np.zeros_like(pred)
    n_fg = int(fg.sum())
    if n_fg == 0:
        return 0.0, grad
    d = pred[fg] - target[fg]
    loss = smooth_l1(d).sum() / n_fg
    grad[fg] = np.where(np.abs(d) < 1.0, d, np.sign(d)) / n_fg
    return float(loss), grad


def total_loss(reg, cls_seen, cls_unseen, con_region, lam: float, beta: float) -> LossBreakdown:
    parts = (reg, cls_seen, cls_unseen, con_region)
    if not all(np.isfinite(parts)):
        raise FloatingPointError(f"non-finite loss term in {parts}")
    return LossBreakdown(float(reg), float(cls_seen), float(cls_unseen), float(con_region),
                         float(reg + cls_seen + lam * cls_unseen + beta * con_region))
