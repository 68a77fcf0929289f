"""Class vocabulary, semantic embedding table and the seen-to-unseen
similarity matrix used as soft supervision."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

BACKGROUND = "background"
SEEN = "seen"
UNSEEN = "unseen"


class EmbeddingFileError(ValueError):
    pass


class MissingClass(EmbeddingFileError):
    pass


class DuplicateClass(EmbeddingFileError):
    pass


class DimensionMismatch(EmbeddingFileError):
    pass


class ZeroNormVector(EmbeddingFileError):
    pass


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered label space: background at 0, then seen, then unseen."""

    names: tuple
    n_seen: int
    n_unseen: int

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != 1 + self.n_seen + self.n_unseen:
            raise ValueError("names must be background + seen + unseen")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        if self.n_seen < 1 or self.n_unseen < 0:
            raise ValueError("need at least one seen class")

    @classmethod
    def build(cls, seen: Sequence[str], unseen: Sequence[str], background: str = BACKGROUND):
        return cls((background, *seen, *unseen), len(seen), len(unseen))

    @property
    def n_classes(self) -> int:
        return len(self.names)

    @property
    def seen_indices(self) -> np.ndarray:
        return np.arange(1, 1 + self.n_seen)

    @property
    def unseen_indices(self) -> np.ndarray:
        return np.arange(1 + self.n_seen, self.n_classes)

    @property
    def foreground_names(self) -> tuple:
        return self.names[1:]

    def role(self, index: int) -> str:
        if index == 0:
            return BACKGROUND
        return SEEN if index <= self.n_seen else UNSEEN

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}") from None

    def to_dict(self):
        return {"names": list(self.names), "n_seen": self.n_seen, "n_unseen": self.n_unseen}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), d["n_seen"], d["n_unseen"])


@dataclass(frozen=True)
class SemanticTable:
    """Unit-norm foreground embeddings, rows in vocabulary order (no background)."""

    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError("embeddings must be a matrix")
        norms = np.linalg.norm(emb, axis=1)
        if np.any(norms == 0):
            raise ZeroNormVector("zero-norm class embedding")
        # rows already unit norm are left alone so save/load is exact
        norms = np.where(np.abs(norms - 1.0) <= 4 * np.finfo(float).eps, 1.0, norms)
        emb = emb / norms[:, None]
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self):
        return self.embeddings.shape[0]


def load_embeddings(path, vocab: ClassVocabulary) -> SemanticTable:
    """Read ``class_name,v1,...,vd`` rows (``#`` starts a comment line)."""
    rows = {}
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or not rec[0].strip() or rec[0].lstrip().startswith("#"):
                continue
            name = rec[0].strip()
            vec = np.array([float(v) for v in rec[1:]], dtype=np.float64)
            if name in rows:
                raise DuplicateClass(f"class {name!r} appears twice")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DimensionMismatch(f"class {name!r} has dimension {vec.size}, expected {dim}")
            if not np.linalg.norm(vec) > 0:
                raise ZeroNormVector(f"class {name!r} has a zero-norm embedding")
            rows[name] = vec
    missing = [n for n in vocab.foreground_names if n not in rows]
    if missing:
        raise MissingClass(f"no embedding for {', '.join(missing)}")
    return SemanticTable(np.stack([rows[n] for n in vocab.foreground_names]))


def save_embeddings(path, table: SemanticTable, vocab: ClassVocabulary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {len(table)} classes, dim {table.dim}\n")
        w = csv.writer(fh, lineterminator="\n")
        for name, vec in zip(vocab.foreground_names, table.embeddings):
            w.writerow([name, *(repr(float(v)) for v in vec)])


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("vectors differ in dimension")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroNormVector("cosine of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def build_similarity_matrix(table: SemanticTable, vocab: ClassVocabulary,
                            temperature: float = 1.0) -> np.ndarray:
    """n_c x n_u matrix: zero row for background, softmax of raw cosines for
    seen classes, one-hot rows for unseen classes."""
    if len(table) != vocab.n_classes - 1:
        raise ValueError(f"table has {len(table)} rows, vocabulary {vocab.n_classes - 1} foreground classes")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ns, nu = vocab.n_seen, vocab.n_unseen
    S = np.zeros((vocab.n_classes, nu))
    if nu == 0:
        return S
    A = table.embeddings  # rows already unit norm
    cos = np.clip(A[:ns] @ A[ns:].T, -1.0, 1.0)
    S[1:1 + ns] = _softmax(cos / temperature, axis=1)
    S[1 + ns:] = np.eye(nu)
    return S


def similarity_to_json(S: np.ndarray, vocab: ClassVocabulary) -> str:
    unseen = [vocab.names[i] for i in vocab.unseen_indices]
    rows = {name: dict(zip(unseen, map(float, S[i]))) for i, name in enumerate(vocab.names)}
    return json.dumps({"unseen": unseen, "rows": rows}, indent=2)
