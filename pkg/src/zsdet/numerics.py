"""Small dense-network toolkit: affine layers, MLPs with hand-written
backprop, momentum SGD, finite-difference checks and checkpoints.

Everything runs in float64 so gradient checks at 1e-4 relative error are
meaningful.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity")
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_grad(z, y, kind):
    if kind == "relu":
        # subgradient at exactly 0 is taken as 0
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return y * (1.0 - y)
    return np.ones_like(z)


@dataclass
class AffineLayer:
    """y = act(x @ W.T + b) with W of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.b.shape[0] != self.W.shape[0]:
            raise ShapeError(f"bias {self.b.shape} does not match weights {self.W.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator):
        """Glorot-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        W = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return cls(W, np.zeros(out_dim), activation)

    def forward(self, x):
        z = x @ self.W.T + self.b
        y = _activate(z, self.activation)
        return y, (x, z, y)

    def backward(self, cache, dy):
        x, z, y = cache
        dz = dy * _activation_grad(z, y, self.activation)
        dW = dz.T @ x
        db = dz.sum(axis=0)
        dx = dz @ self.W
        return dx, {"W": dW, "b": db}

    def params(self) -> Dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


@dataclass
class Mlp:
    layers: List[AffineLayer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer output {a.out_dim} does not feed input {b.in_dim}")

    @classmethod
    def init(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        return cls([AffineLayer.init(i, o, a, rng)
                    for i, o, a in zip(sizes[:-1], sizes[1:], activations)])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> Dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{k}.W"] = layer.W
            out[f"{k}.b"] = layer.b
        return out


def mlp_forward(net: Mlp, x):
    """Run ``x`` (batch x in) through ``net``; returns output and a cache for
    :func:`mlp_backward`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in_dim {net.in_dim}")
    caches = []
    h = x
    for layer in net.layers:
        h, c = layer.forward(h)
        caches.append(c)
    return h, caches


def mlp_backward(net: Mlp, cache, dy):
    """Backpropagate ``dy`` through ``net``.

    Returns ``(dx, grads)`` where ``grads`` is keyed like :meth:`Mlp.params`.
    """
    dy = np.asarray(dy, dtype=np.float64)
    if len(cache) != len(net.layers):
        raise ShapeError("cache does not come from this network")
    if dy.shape != cache[-1][2].shape:
        raise ShapeError(f"upstream gradient {dy.shape} vs output {cache[-1][2].shape}")
    grads = {}
    for k in range(len(net.layers) - 1, -1, -1):
        dy, g = net.layers[k].backward(cache[k], dy)
        grads[f"{k}.W"] = g["W"]
        grads[f"{k}.b"] = g["b"]
    return dy, grads


def elementwise_product_backward(a, b, dout):
    a, b, dout = (np.asarray(v, dtype=np.float64) for v in (a, b, dout))
    if not (a.shape == b.shape == dout.shape):
        raise ShapeError(f"shapes differ: {a.shape}, {b.shape}, {dout.shape}")
    return dout * b, dout * a


@dataclass
class SgdState:
    """Heavy-ball momentum: v <- mu*v - lr*g ; p <- p + v."""

    lr: float = 0.01
    momentum: float = 0.9
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: SgdState):
    """Update ``params`` in place (arrays are mutated) and return them."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, parameter {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = state.momentum * v - state.lr * g
        state.velocity[name] = v
        p += v
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: Optional[Tuple[str, tuple]]
    n_checked: int
    per_param: Dict[str, float]


def finite_diff_check(loss_fn: Callable[[], float], params: Dict[str, np.ndarray],
                      grads: Dict[str, np.ndarray], eps: float = 1e-5,
                      max_coords: Optional[int] = None, rng=None,
                      floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic ``grads`` with central differences of ``loss_fn``.

    ``loss_fn`` is evaluated after perturbing the arrays in ``params`` in
    place, so it must read them by reference. With ``max_coords`` set, that
    many coordinates per parameter are sampled. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    worst, worst_at, n = 0.0, None, 0
    per = {}
    for name, p in params.items():
        g = grads[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        pmax = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn()
            flat[i] = old - eps
            lm = loss_fn()
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            ana = g.reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            n += 1
            if rel > pmax:
                pmax = rel
            if rel > worst:
                worst, worst_at = rel, (name, np.unravel_index(i, p.shape))
        per[name] = pmax
    return GradCheckReport(worst, worst_at, n, per)


def save_checkpoint(path, params: Dict[str, np.ndarray], seed=None, extra=None):
    """JSON checkpoint. Floats go through ``repr`` so the round trip is exact."""
    record = {
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "extra": extra or {},
        "params": [
            {"name": k, "shape": list(v.shape), "data": v.reshape(-1).tolist()}
            for k, v in params.items()
        ],
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(record))
    tmp.replace(path)


def load_checkpoint(path):
    """Returns ``(params, seed, extra)``."""
    try:
        record = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if not isinstance(record, dict) or record.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    params = {}
    try:
        for p in record["params"]:
            params[p["name"]] = np.asarray(p["data"], dtype=np.float64).reshape(p["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed parameter record ({exc})") from None
    return params, record.get("seed"), record.get("extra", {})
