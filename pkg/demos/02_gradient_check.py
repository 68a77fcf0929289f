"""Finite-difference check of every loss term against the hand-written
backward pass on a small random batch."""
import numpy as np

from zsdet.model import ModelConfig, ModelParams
from zsdet.numerics import finite_diff_check
from zsdet.semantics import ClassVocabulary, SemanticTable, build_similarity_matrix
from zsdet.trainer import loss_and_gradients

rng = np.random.default_rng(0)
vocab = ClassVocabulary.build(["a", "b", "c", "d"], ["x", "y", "z"])
table = SemanticTable(rng.standard_normal((7, 6)))
S = build_similarity_matrix(table, vocab)
cfg = ModelConfig(d_r=8, d_c=6, d_e=10, g_hidden=8, h_dim=5)
params = ModelParams.init(cfg, table, vocab, rng)
flat = params.flat()
for name, arr in flat.items():
    if name.endswith(".b"):
        arr += rng.normal(0, 0.1, arr.shape)   # step off the ReLU kinks

f = rng.standard_normal((12, cfg.d_r))
labels = rng.integers(0, 5, 12)
targets = np.where(labels[:, None] > 0, rng.normal(size=(12, 4)), 0.0)

for term, w in {"regression": (1, 0, 0, 0), "seen CE": (0, 1, 0, 0),
                "unseen BCE": (0, 0, 1, 0), "contrastive": (0, 0, 0, 1)}.items():
    def loss():
        p, _ = loss_and_gradients(params, cfg, f, labels, targets, table, vocab, S, need_grads=False)
        return w[0] * p.reg + w[1] * p.cls_seen + w[2] * p.cls_unseen + w[3] * p.con_region
    _, grads = loss_and_gradients(params, cfg, f, labels, targets, table, vocab, S, weights=w)
    rep = finite_diff_check(loss, flat, grads, eps=1e-5)
    print(f"{term:>12}: max relative error {rep.max_rel_error:.2e}")
