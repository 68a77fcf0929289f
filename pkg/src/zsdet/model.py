"""Detection head: visual/semantic mapping functions, two-path consistency
heads, contrastive embedding head, box regressor and a learnable
background embedding."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

import numpy as np

from .numerics import AffineLayer, Mlp, ShapeError, mlp_backward, mlp_forward
from .semantics import ClassVocabulary, SemanticTable

NORM_EPS = 1e-12


@dataclass
class ModelConfig:
    d_r: int = 32
    d_c: int = 16
    d_e: int = 64
    g_hidden: int = 64
    h_dim: int = 32
    tau: float = 0.1
    lam: float = 0.2
    beta: float = 0.5
    include_background_in_contrastive: bool = True
    a0_noise: float = 0.01

    def __post_init__(self):
        for name in ("d_r", "d_c", "d_e", "g_hidden", "h_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ModelParams:
    p_v: Mlp
    p_s: Mlp
    g_s: Mlp
    g_u: Mlp
    h_v: Mlp
    regressor: AffineLayer
    a_0: np.ndarray

    NETS = ("p_v", "p_s", "g_s", "g_u", "h_v")

    @classmethod
    def init(cls, config: ModelConfig, table: SemanticTable, vocab: ClassVocabulary,
             rng: np.random.Generator):
        c = config
        p_v = Mlp.init([c.d_r, c.d_e], ["relu"], rng)
        p_s = Mlp.init([c.d_c, c.d_e], ["relu"], rng)
        g_s = Mlp.init([c.d_e, c.g_hidden, 1], ["relu", "identity"], rng)
        g_u = Mlp.init([c.d_e, c.g_hidden, 1], ["relu", "sigmoid"], rng)
        h_v = Mlp.init([c.d_e, c.h_dim], ["identity"], rng)
        regressor = AffineLayer.init(c.d_r, 4, "identity", rng)
        seen = table.embeddings[: vocab.n_seen]
        a_0 = seen.mean(axis=0) + c.a0_noise * rng.standard_normal(c.d_c)
        return cls(p_v, p_s, g_s, g_u, h_v, regressor, a_0)

    def flat(self) -> Dict[str, np.ndarray]:
        """Name -> parameter array. Arrays are the live storage, so in-place
        updates (SGD, finite differences) act on the model."""
        out = {}
        for net in self.NETS:
            for k, v in getattr(self, net).params().items():
                out[f"{net}.{k}"] = v
        out["regressor.W"] = self.regressor.W
        out["regressor.b"] = self.regressor.b
        out["a_0"] = self.a_0
        return out

    @classmethod
    def from_flat(cls, flat: Dict[str, np.ndarray], config: ModelConfig):
        def net(name, acts):
            return Mlp([AffineLayer(flat[f"{name}.{k}.W"].copy(), flat[f"{name}.{k}.b"].copy(), a)
                        for k, a in enumerate(acts)])
        return cls(
            net("p_v", ["relu"]), net("p_s", ["relu"]),
            net("g_s", ["relu", "identity"]), net("g_u", ["relu", "sigmoid"]),
            net("h_v", ["identity"]),
            AffineLayer(flat["regressor.W"].copy(), flat["regressor.b"].copy(), "identity"),
            flat["a_0"].copy(),
        )


@dataclass
class TrainForwardOutput:
    O_s: np.ndarray        # n_r x (n_s + 1) logits
    O_u: np.ndarray        # n_r x n_u probabilities
    Z: np.ndarray          # n_r x h_dim, unit rows
    offsets: np.ndarray    # n_r x 4
    cache: Optional[dict] = None


def assemble_class_matrix(table: SemanticTable, a_0) -> np.ndarray:
    a_0 = np.asarray(a_0, dtype=np.float64)
    if a_0.shape != (table.dim,):
        raise ShapeError(f"background embedding {a_0.shape} vs table dim {table.dim}")
    return np.vstack([a_0[None, :], table.embeddings])


def _pair_head(head: Mlp, Pv, Ps):
    """Score every (region, class) pair with ``head`` on the fused vector
    Pv[i] * Ps[j]. Returns an (n_r, n_cls) matrix and a cache."""
    n_r, n_k = Pv.shape[0], Ps.shape[0]
    fused = (Pv[:, None, :] * Ps[None, :, :]).reshape(n_r * n_k, -1)
    out, cache = mlp_forward(head, fused)
    return out.reshape(n_r, n_k), cache


def _pair_head_backward(head: Mlp, cache, Pv, Ps, dout):
    n_r, n_k = dout.shape
    dfused, grads = mlp_backward(head, cache, dout.reshape(-1, 1))
    dfused = dfused.reshape(n_r, n_k, -1)
    dPv = np.einsum("ikd,kd->id", dfused, Ps)
    dPs = np.einsum("ikd,id->kd", dfused, Pv)
    return dPv, dPs, grads


def _check_features(params: ModelParams, features):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != params.p_v.in_dim:
        raise ShapeError(f"features {f.shape} do not match d_r={params.p_v.in_dim}")
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("non-finite region features")
    return f


def forward_train(params: ModelParams, config: ModelConfig, features, A, vocab: ClassVocabulary,
                  keep_cache: bool = True) -> TrainForwardOutput:
    f = _check_features(params, features)
    ns1 = vocab.n_seen + 1
    Pv, c_pv = mlp_forward(params.p_v, f)
    Ps, c_ps = mlp_forward(params.p_s, A)
    O_s, c_gs = _pair_head(params.g_s, Pv, Ps[:ns1])
    if vocab.n_unseen:
        O_u, c_gu = _pair_head(params.g_u, Pv, Ps[ns1:])
    else:
        O_u, c_gu = np.zeros((f.shape[0], 0)), None
    H, c_hv = mlp_forward(params.h_v, Pv)
    norms = np.maximum(np.linalg.norm(H, axis=1, keepdims=True), NORM_EPS)
    Z = H / norms
    offsets, c_reg = params.regressor.forward(f)
    for name, arr in (("O_s", O_s), ("O_u", O_u), ("Z", Z), ("offsets", offsets)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite activation in {name}")
    cache = None
    if keep_cache:
        cache = dict(Pv=Pv, Ps=Ps, c_pv=c_pv, c_ps=c_ps, c_gs=c_gs, c_gu=c_gu,
                     c_hv=c_hv, c_reg=c_reg, Z=Z, norms=norms, ns1=ns1)
    return TrainForwardOutput(O_s, O_u, Z, offsets, cache)


def backward_train(params: ModelParams, out: TrainForwardOutput, dO_s, dO_u, dZ, doffsets):
    """Gradients of a scalar loss with respect to every parameter, given the
    loss gradients with respect to the four outputs of :func:`forward_train`.
    Keys match :meth:`ModelParams.flat`."""
    c = out.cache
    if c is None:
        raise ValueError("forward was run without a cache")
    Pv, Ps, ns1 = c["Pv"], c["Ps"], c["ns1"]
    grads = {}

    dPv, dPs_seen, g = _pair_head_backward(params.g_s, c["c_gs"], Pv, Ps[:ns1], dO_s)
    grads.update({f"g_s.{k}": v for k, v in g.items()})
    dPs = np.zeros_like(Ps)
    dPs[:ns1] = dPs_seen
    if c["c_gu"] is not None:
        dPv_u, dPs_unseen, g = _pair_head_backward(params.g_u, c["c_gu"], Pv, Ps[ns1:], dO_u)
        dPv += dPv_u
        dPs[ns1:] = dPs_unseen
    else:
        g = {k: np.zeros_like(v) for k, v in params.g_u.params().items()}
    grads.update({f"g_u.{k}": v for k, v in g.items()})

    Z = c["Z"]
    dH = (dZ - Z * np.sum(Z * dZ, axis=1, keepdims=True)) / c["norms"]
    dPv_h, g = mlp_backward(params.h_v, c["c_hv"], dH)
    dPv += dPv_h
    grads.update({f"h_v.{k}": v for k, v in g.items()})

    _, g = mlp_backward(params.p_v, c["c_pv"], dPv)
    grads.update({f"p_v.{k}": v for k, v in g.items()})
    dA, g = mlp_backward(params.p_s, c["c_ps"], dPs)
    grads.update({f"p_s.{k}": v for k, v in g.items()})
    grads["a_0"] = dA[0].copy()

    _, g = params.regressor.backward(c["c_reg"], doffsets)
    grads["regressor.W"] = g["W"]
    grads["regressor.b"] = g["b"]
    return grads


def _softmax_rows(x):
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def forward_infer(params: ModelParams, config: ModelConfig, features, A, vocab: ClassVocabulary,
                  return_logits: bool = False):
    """Test-time scores.

    Returns ``(o_s, o_u, offsets)``: ``o_s`` is a softmax over all n_c
    classes of the seen-path head applied to every class embedding, ``o_u``
    the unseen-path sigmoid outputs. With ``return_logits`` the raw seen-path
    logits are appended.
    """
    f = _check_features(params, features)
    Pv, _ = mlp_forward(params.p_v, f)
    Ps, _ = mlp_forward(params.p_s, A)
    logits, _ = _pair_head(params.g_s, Pv, Ps)
    if vocab.n_unseen:
        o_u, _ = _pair_head(params.g_u, Pv, Ps[vocab.n_seen + 1:])
    else:
        o_u = np.zeros((f.shape[0], 0))
    offsets, _ = params.regressor.forward(f)
    o_s = _softmax_rows(logits)
    if return_logits:
        return o_s, o_u, offsets, logits
    return o_s, o_u, offsets
