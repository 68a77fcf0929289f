"""Deterministic synthetic region-proposal world.

Stands in for a CNN backbone plus RPN: class prototypes in feature space are
a fixed linear image of the class embeddings, so semantics predict features
and unseen classes are reachable through seen ones.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np

from .geometry import encode_offsets, pairwise_iou
from .semantics import ClassVocabulary, SemanticTable

SPLITS = ("train", "test_seen", "test_zsd", "test_gzsd")
_SPLIT_IDS = {name: i for i, name in enumerate(SPLITS)}

VOC_SEEN = ("aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "cat", "chair", "cow",
            "diningtable", "horse", "motorbike", "person", "pottedplant", "sheep", "tvmonitor")
VOC_UNSEEN = ("car", "dog", "sofa", "train")


@dataclass
class SynthConfig:
    n_s: int = 16
    n_u: int = 4
    d_c: int = 16
    d_r: int = 32
    n_train_images: int = 200
    n_test_images: int = 50
    min_objects: int = 1
    max_objects: int = 3
    proposals_per_image: int = 8
    proposals_per_object: int = 2
    feature_noise: float = 0.3
    embedding_noise: float = 0.3
    n_groups: int = 2
    group_spread: float = 1.0
    prototype_scale: float = 2.0
    objectness: float = 2.0
    semantic_gap: float = 0.0
    nuisance_dims: int = 4
    nuisance_scale: float = 2.0
    jitter: float = 0.12
    background_clutter: float = 0.5
    iou_threshold: float = 0.5
    plane_size: float = 100.0
    min_box: float = 10.0
    max_box: float = 40.0
    seed: int = 0

    def __post_init__(self):
        counts = ("n_s", "d_c", "d_r", "n_train_images", "n_test_images", "min_objects",
                  "max_objects", "proposals_per_image")
        for name in counts:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_u < 0:
            raise ValueError("n_u must be non-negative")
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects exceeds max_objects")
        if self.feature_noise < 0 or self.jitter < 0:
            raise ValueError("noise scales must be non-negative")
        if self.d_c < 2:
            raise ValueError("d_c must be at least 2")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ImageRecord:
    image_id: str
    gt_boxes: np.ndarray        # (k, 4)
    gt_labels: np.ndarray       # (k,)
    proposals: np.ndarray       # (m, 4)
    features: np.ndarray        # (m, d_r)
    labels: np.ndarray          # (m,)
    targets: np.ndarray         # (m, 4), zero rows for background

    def to_json(self) -> str:
        props = []
        for b, f, lab, t in zip(self.proposals, self.features, self.labels, self.targets):
            props.append({"box": b.tolist(), "feature": f.tolist(), "label": int(lab),
                          "target": t.tolist() if lab > 0 else None})
        return json.dumps({
            "image_id": self.image_id,
            "gts": [{"box": b.tolist(), "label": int(lab)} for b, lab in zip(self.gt_boxes, self.gt_labels)],
            "proposals": props,
        })

    @classmethod
    def from_json(cls, line: str, d_r: Optional[int] = None):
        rec = json.loads(line)
        gts, props = rec["gts"], rec["proposals"]
        d = d_r if d_r is not None else (len(props[0]["feature"]) if props else 0)
        return cls(
            image_id=rec["image_id"],
            gt_boxes=np.array([g["box"] for g in gts], dtype=np.float64).reshape(-1, 4),
            gt_labels=np.array([g["label"] for g in gts], dtype=np.int64),
            proposals=np.array([p["box"] for p in props], dtype=np.float64).reshape(-1, 4),
            features=np.array([p["feature"] for p in props], dtype=np.float64).reshape(-1, d),
            labels=np.array([p["label"] for p in props], dtype=np.int64),
            targets=np.array([p["target"] if p["target"] is not None else [0.0] * 4 for p in props],
                             dtype=np.float64).reshape(-1, 4),
        )


@dataclass
class SynthDataset:
    vocab: ClassVocabulary
    table: SemanticTable
    split: str
    images: List[ImageRecord] = field(default_factory=list)

    def regions(self):
        """All proposals stacked: (features, labels, boxes, targets)."""
        if not self.images:
            return np.zeros((0, self.table.dim)), np.zeros(0, np.int64), np.zeros((0, 4)), np.zeros((0, 4))
        return (np.vstack([im.features for im in self.images]),
                np.concatenate([im.labels for im in self.images]),
                np.vstack([im.proposals for im in self.images]),
                np.vstack([im.targets for im in self.images]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for im in self.images:
                fh.write(im.to_json() + "\n")

    @classmethod
    def load(cls, path, vocab: ClassVocabulary, table: SemanticTable, split: str = ""):
        with open(path, encoding="utf-8") as fh:
            images = [ImageRecord.from_json(line) for line in fh if line.strip()]
        return cls(vocab, table, split, images)


@dataclass
class RegionBatch:
    features: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray
    targets: np.ndarray
    index: np.ndarray


def make_vocabulary(config: SynthConfig) -> ClassVocabulary:
    if config.n_s == len(VOC_SEEN) and config.n_u == len(VOC_UNSEEN):
        return ClassVocabulary.build(VOC_SEEN, VOC_UNSEEN)
    return ClassVocabulary.build([f"seen_{i:02d}" for i in range(config.n_s)],
                                 [f"unseen_{i:02d}" for i in range(config.n_u)])


def _world_rng(config: SynthConfig, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, *key]))


def generate_embeddings(config: SynthConfig, seed: Optional[int] = None, return_parents: bool = False):
    """Unit-norm class embeddings with a coarse group structure.

    Seen classes are spread round-robin over ``n_groups`` random group
    centres (``group_spread`` sets how far a class strays from its centre).
    Each unseen class is a noisy convex mix of 1-3 seen classes drawn from
    one group. With ``return_parents`` also returns, per unseen class, the
    ``(seen_index, weight)`` pairs it was mixed from (0-based seen indices).
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    n_groups = config.n_groups or max(1, config.n_u)
    centres = rng.standard_normal((n_groups, config.d_c))
    if n_groups > 1:
        # centring makes groups mutually anti-correlated
        centres -= centres.mean(axis=0)
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    group = np.arange(config.n_s) % n_groups
    seen = centres[group] + config.group_spread * rng.standard_normal((config.n_s, config.d_c)) / np.sqrt(config.d_c)
    seen /= np.linalg.norm(seen, axis=1, keepdims=True)
    unseen, parents = [], []
    for u in range(config.n_u):
        members = np.flatnonzero(group == u % n_groups)
        k = int(rng.integers(1, min(3, members.size) + 1))
        idx = rng.choice(members, size=k, replace=False)
        w = rng.dirichlet(np.ones(k))
        noise = rng.standard_normal(config.d_c)
        noise /= np.linalg.norm(noise)
        v = w @ seen[idx] + config.embedding_noise * noise
        unseen.append(v / np.linalg.norm(v))
        parents.append([(int(i), float(wi)) for i, wi in zip(idx, w)])
    emb = np.vstack([seen, *unseen]) if unseen else seen
    table = SemanticTable(emb)
    if return_parents:
        return table, parents
    return table


def feature_map(config: SynthConfig) -> np.ndarray:
    """The fixed d_r x d_c map taking class embeddings to feature prototypes."""
    rng = _world_rng(config, 202)
    return rng.standard_normal((config.d_r, config.d_c)) * config.prototype_scale / np.sqrt(config.d_c)


def nuisance_basis(config: SynthConfig):
    """d_r x k orthonormal basis of class-independent variation, or None."""
    if config.nuisance_dims <= 0 or config.nuisance_scale == 0:
        return None
    rng = _world_rng(config, 205)
    q, _ = np.linalg.qr(rng.standard_normal((config.d_r, config.nuisance_dims)))
    return q


def class_prototypes(config: SynthConfig, table: SemanticTable) -> np.ndarray:
    """(n_s + n_u) x d_r prototypes mu_y = G a_y + gap_y, in foreground order.

    ``gap_y`` is a class-specific offset the embeddings cannot explain,
    scaled by ``semantic_gap`` relative to the typical prototype norm.
    """
    G = feature_map(config)
    protos = table.embeddings @ G.T
    if config.semantic_gap > 0:
        rng = _world_rng(config, 204)
        offsets = rng.standard_normal(protos.shape) / np.sqrt(config.d_r)
        protos = protos + config.semantic_gap * np.linalg.norm(protos, axis=1).mean() * offsets
    return protos


def objectness_direction(config: SynthConfig) -> np.ndarray:
    """Class-agnostic component shared by every object's features."""
    v = _world_rng(config, 203).standard_normal(config.d_r)
    return config.objectness * v / np.linalg.norm(v)


def _random_box(rng, config: SynthConfig):
    w, h = rng.uniform(config.min_box, config.max_box, size=2)
    x, y = rng.uniform(0, config.plane_size, size=2)
    return np.array([x, y, w, h])


def _jitter_box(rng, box, scale):
    x, y, w, h = box
    dx, dy = rng.normal(0, scale, size=2) * (w, h)
    sw, sh = np.exp(rng.normal(0, scale, size=2))
    return np.array([x + dx, y + dy, w * sw, h * sh])


def assign_labels(proposals, gt_boxes, gt_labels, iou_threshold: float):
    """Label each proposal with the class of its best-overlapping GT when that
    IoU reaches the threshold, else background; returns labels, targets and
    the matched IoU."""
    m = proposals.shape[0]
    labels = np.zeros(m, dtype=np.int64)
    targets = np.zeros((m, 4))
    best = np.zeros(m)
    if m == 0 or gt_boxes.shape[0] == 0:
        return labels, targets, best
    ious = pairwise_iou(proposals, gt_boxes)
    j = np.argmax(ious, axis=1)
    best = ious[np.arange(m), j]
    fg = best >= iou_threshold
    labels[fg] = gt_labels[j[fg]]
    targets[fg] = encode_offsets(proposals[fg], gt_boxes[j[fg]])
    return labels, targets, best


def _classes_for_split(vocab: ClassVocabulary, split: str) -> np.ndarray:
    if split in ("train", "test_seen"):
        return vocab.seen_indices
    if split == "test_zsd":
        return vocab.unseen_indices
    if split == "test_gzsd":
        return np.arange(1, vocab.n_classes)
    raise ValueError(f"invalid split {split!r}; expected one of {SPLITS}")


def generate_scene(config: SynthConfig, table: SemanticTable, split: str,
                   seed: Optional[int] = None, n_images: Optional[int] = None) -> SynthDataset:
    """Generate one split. Every image draws from its own child seed, so
    images can be produced independently and in any order."""
    vocab = make_vocabulary(config)
    classes = _classes_for_split(vocab, split)
    if classes.size == 0:
        raise ValueError(f"split {split!r} has no classes to sample")
    if n_images is None:
        n_images = config.n_train_images if split == "train" else config.n_test_images
    seed = config.seed if seed is None else seed
    protos = class_prototypes(config, table)
    G = feature_map(config)
    obj = objectness_direction(config)
    nuisance = nuisance_basis(config)
    images = []
    for k in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 303, _SPLIT_IDS[split], k]))
        n_obj = int(rng.integers(config.min_objects, config.max_objects + 1))
        gt_boxes = np.array([_random_box(rng, config) for _ in range(n_obj)])
        if split == "test_gzsd":
            # half the objects unseen, so both halves of the metric have support
            unseen = rng.random(n_obj) < 0.5
            gt_labels = np.where(unseen, rng.choice(vocab.unseen_indices, size=n_obj),
                                 rng.choice(vocab.seen_indices, size=n_obj))
        else:
            gt_labels = rng.choice(classes, size=n_obj)
        boxes, source = [], []
        for o in range(n_obj):
            for _ in range(config.proposals_per_object):
                boxes.append(_jitter_box(rng, gt_boxes[o], config.jitter))
                source.append(o)
        while len(boxes) < config.proposals_per_image:
            boxes.append(_random_box(rng, config))
            source.append(-1)
        boxes = np.array(boxes[: max(config.proposals_per_image, n_obj * config.proposals_per_object)])
        labels, targets, _ = assign_labels(boxes, gt_boxes, gt_labels, config.iou_threshold)
        # feature = IoU-weighted prototype of the most-overlapped object plus
        # clutter and noise; partial boxes carry partial object evidence
        ious = pairwise_iou(boxes, gt_boxes)
        j = np.argmax(ious, axis=1)
        q = ious[np.arange(len(boxes)), j]
        feats = q[:, None] * (protos[gt_labels[j] - 1] + obj)
        clutter_emb = rng.standard_normal((len(boxes), config.d_c)) / np.sqrt(config.d_c)
        feats += config.background_clutter * (1 - q)[:, None] * (clutter_emb @ G.T)
        feats += config.feature_noise * rng.standard_normal(feats.shape)
        if nuisance is not None:
            # class-independent appearance factors (pose, lighting) on objects only
            z = rng.standard_normal((len(boxes), nuisance.shape[1]))
            feats += config.nuisance_scale * q[:, None] * (z @ nuisance.T)
        images.append(ImageRecord(f"{split}_{k:05d}", gt_boxes, gt_labels.astype(np.int64),
                                  boxes, feats, labels, targets))
    return SynthDataset(vocab, table, split, images)


def batch_iterator(dataset: SynthDataset, batch_size: int, seed: int, epoch: int = 0) -> Iterator[RegionBatch]:
    """One shuffled pass over all proposals of ``dataset``."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    feats, labels, boxes, targets = dataset.regions()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 404, epoch]))
    order = rng.permutation(len(labels))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield RegionBatch(feats[idx], labels[idx], boxes[idx], targets[idx], idx)


def write_dataset_files(config: SynthConfig, out_dir) -> dict:
    """Write embeddings CSV and one JSON-lines file per split."""
    from .semantics import save_embeddings

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = make_vocabulary(config)
    table = generate_embeddings(config)
    paths = {"embeddings": out / "embeddings.csv", "vocabulary": out / "vocabulary.json"}
    save_embeddings(paths["embeddings"], table, vocab)
    paths["vocabulary"].write_text(json.dumps(vocab.to_dict(), indent=2) + "\n")
    for split in SPLITS:
        if split in ("test_zsd", "test_gzsd") and config.n_u == 0:
            continue
        ds = generate_scene(config, table, split)
        paths[split] = out / f"{split}.jsonl"
        ds.save(paths[split])
    return paths
