"""Joint multi-task training loop with momentum SGD."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .losses import (LossBreakdown, box_regression_loss, region_contrastive_loss,
                     seen_classification_loss, total_loss, unseen_alignment_loss)
from .model import (ModelConfig, ModelParams, assemble_class_matrix, backward_train,
                    forward_train)
from .numerics import NonFiniteGradient, SgdState, save_checkpoint, sgd_step
from .semantics import ClassVocabulary, SemanticTable
from .synthdata import SynthDataset, batch_iterator

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def loss_and_gradients(params: ModelParams, config: ModelConfig, features, labels, targets,
                       table: SemanticTable, vocab: ClassVocabulary, S, need_grads: bool = True,
                       weights=None):
    """Full objective L_reg + L_cls_s + lam * L_cls_u + beta * L_con on one
    batch of regions. Returns ``(LossBreakdown, grads or None)``.

    ``weights`` overrides the four term weights (reg, cls_s, cls_u, con) used
    for the gradient only, e.g. ``(0, 0, 1, 0)`` differentiates L_cls_u alone.
    """
    A = assemble_class_matrix(table, params.a_0)
    out = forward_train(params, config, features, A, vocab, keep_cache=need_grads)
    l_reg, d_off = box_regression_loss(out.offsets, targets, labels)
    l_s, d_os = seen_classification_loss(out.O_s, labels)
    if vocab.n_unseen:
        l_u, d_ou = unseen_alignment_loss(out.O_u, labels, S)
    else:
        l_u, d_ou = 0.0, np.zeros_like(out.O_u)
    l_con, d_z = region_contrastive_loss(out.Z, labels, config.tau,
                                         config.include_background_in_contrastive)
    parts = total_loss(l_reg, l_s, l_u, l_con, config.lam, config.beta)
    if not need_grads:
        return parts, None
    w_reg, w_s, w_u, w_con = (1.0, 1.0, config.lam, config.beta) if weights is None else weights
    grads = backward_train(params, out, w_s * d_os, w_u * d_ou, w_con * d_z, w_reg * d_off)
    return parts, grads


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    steps: int


def train(params: ModelParams, config: ModelConfig, dataset: SynthDataset, S, *,
          epochs: int = 50, batch_size: int = 64, lr: float = 0.01, momentum: float = 0.9,
          seed: int = 0, log_path=None, checkpoint_path=None, checkpoint_every: int = 0,
          checkpoint_extra: Optional[dict] = None,
          on_step: Optional[Callable[[int, LossBreakdown], None]] = None) -> TrainResult:
    """Run minibatch SGD over the proposals of ``dataset``.

    ``params`` is updated in place. When a loss or gradient turns non-finite,
    training stops with :class:`TrainingDiverged` and the last written
    checkpoint (if any) is left untouched.
    """
    state = SgdState(lr=lr, momentum=momentum)
    flat = params.flat()
    history = []
    step = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(epochs):
            for batch in batch_iterator(dataset, batch_size, seed, epoch):
                try:
                    parts, grads = loss_and_gradients(params, config, batch.features, batch.labels,
                                                      batch.targets, dataset.table, dataset.vocab, S)
                    sgd_step(flat, grads, state)
                except (FloatingPointError, NonFiniteGradient) as exc:
                    raise TrainingDiverged(f"diverged at epoch {epoch} step {step}: {exc}") from exc
                rec = {"epoch": epoch, "step": step, **parts.to_dict()}
                history.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec) + "\n")
                if on_step:
                    on_step(step, parts)
                step += 1
            if checkpoint_path and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, flat, seed, checkpoint_extra)
            if history:
                log.debug("epoch %d loss %.4f", epoch, history[-1]["total"])
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, flat, seed, checkpoint_extra)
    return TrainResult(params, history, step)
