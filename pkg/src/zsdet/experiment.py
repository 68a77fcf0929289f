"""Experiment configuration and the end-to-end steps behind the CLI:
data generation, training, evaluation and hyperparameter sweeps."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .evaluation import EvalReport, GroundTruth, build_report
from .inference import detect, detections_to_jsonl
from .model import ModelConfig, ModelParams
from .numerics import load_checkpoint
from .semantics import ClassVocabulary, SemanticTable, build_similarity_matrix, load_embeddings
from .synthdata import (SPLITS, SynthConfig, SynthDataset, generate_embeddings, generate_scene,
                        make_vocabulary, write_dataset_files)
from .trainer import train

log = logging.getLogger(__name__)

EVAL_SPLIT = {"seen": "test_seen", "zsd": "test_zsd", "gzsd": "test_gzsd"}


class ConfigError(ValueError):
    pass


class VocabularyMismatch(ValueError):
    pass


@dataclass
class TrainerConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    checkpoint_every: int = 10


@dataclass
class EvalConfig:
    score_threshold: float = 0.001
    nms_threshold: float = 0.5
    iou_thresholds: Sequence[float] = (0.5,)
    similarity_temperature: float = 1.0


@dataclass
class ExperimentConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data_dir: str = "data"
    run_dir: str = "run"

    def __post_init__(self):
        if self.model.d_r != self.data.d_r or self.model.d_c != self.data.d_c:
            raise ConfigError("model.d_r/d_c must equal data.d_r/d_c")

    def to_dict(self):
        d = asdict(self)
        d["eval"]["iou_thresholds"] = list(self.eval.iou_thresholds)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = _section(SynthConfig, d.get("data", {}), "data")
        model_d = {"d_r": data.d_r, "d_c": data.d_c, **d.get("model", {})}
        return cls(
            data=data,
            model=_section(ModelConfig, model_d, "model"),
            trainer=_section(TrainerConfig, d.get("trainer", {}), "trainer"),
            eval=_section(EvalConfig, d.get("eval", {}), "eval"),
            data_dir=d.get("data_dir", "data"),
            run_dir=d.get("run_dir", "run"),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, overrides: Dict[str, object]):
        """Apply ``{"section.key": value}`` overrides (values may be strings)."""
        d = self.to_dict()
        for dotted, value in overrides.items():
            parts = dotted.split(".")
            node = d
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config key {dotted!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node[parts[-1]] = _coerce(value, node[parts[-1]])
        return ExperimentConfig.from_dict(d)


def _section(kind, values, name):
    known = {f.name for f in fields(kind)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return kind(**values)


def _coerce(value, current):
    if not isinstance(value, str):
        return value
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, (list, tuple)):
        return [float(v) for v in value.split(",")]
    return value


# --- in-memory world -------------------------------------------------------

@dataclass
class World:
    vocab: ClassVocabulary
    table: SemanticTable
    S: np.ndarray
    splits: Dict[str, SynthDataset]


def build_world(cfg: ExperimentConfig, splits=SPLITS) -> World:
    vocab = make_vocabulary(cfg.data)
    table = generate_embeddings(cfg.data)
    S = build_similarity_matrix(table, vocab, cfg.eval.similarity_temperature)
    data = {s: generate_scene(cfg.data, table, s) for s in splits}
    return World(vocab, table, S, data)


def load_world(cfg: ExperimentConfig, splits=SPLITS) -> World:
    root = Path(cfg.data_dir)
    vocab_path = root / "vocabulary.json"
    if not vocab_path.exists():
        raise FileNotFoundError(f"no dataset in {root}; run gen-data first")
    vocab = ClassVocabulary.from_dict(json.loads(vocab_path.read_text()))
    table = load_embeddings(root / "embeddings.csv", vocab)
    S = build_similarity_matrix(table, vocab, cfg.eval.similarity_temperature)
    data = {}
    for s in splits:
        p = root / f"{s}.jsonl"
        if p.exists():
            data[s] = SynthDataset.load(p, vocab, table, s)
    return World(vocab, table, S, data)


def init_params(cfg: ExperimentConfig, world: World) -> ModelParams:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.trainer.seed, 505]))
    return ModelParams.init(cfg.model, world.table, world.vocab, rng)


def train_model(cfg: ExperimentConfig, world: World, log_path=None, checkpoint_path=None):
    params = init_params(cfg, world)
    t = cfg.trainer
    extra = {"model": cfg.model.to_dict(), "vocabulary": world.vocab.to_dict()}
    result = train(params, cfg.model, world.splits["train"], world.S, epochs=t.epochs,
                   batch_size=t.batch_size, lr=t.lr, momentum=t.momentum, seed=t.seed,
                   log_path=log_path, checkpoint_path=checkpoint_path,
                   checkpoint_every=t.checkpoint_every, checkpoint_extra=extra)
    return params, result.history


def ground_truth(dataset: SynthDataset) -> Dict[str, GroundTruth]:
    return {im.image_id: GroundTruth(im.gt_boxes, im.gt_labels) for im in dataset.images}


def run_detection(cfg: ExperimentConfig, world: World, params: ModelParams, mode: str, dataset=None):
    dataset = dataset if dataset is not None else world.splits[EVAL_SPLIT[mode]]
    return {im.image_id: detect(params, cfg.model, im.proposals, im.features, world.table, world.vocab,
                                world.S, mode, cfg.eval.score_threshold, cfg.eval.nms_threshold,
                                im.image_id)
            for im in dataset.images}


def evaluate_model(cfg: ExperimentConfig, world: World, params: ModelParams, mode: str) -> EvalReport:
    dataset = world.splits[EVAL_SPLIT[mode]]
    dets = run_detection(cfg, world, params, mode, dataset)
    return build_report(dets, ground_truth(dataset), world.vocab, cfg.eval.iou_thresholds, mode)


# --- file-backed steps -----------------------------------------------------

def gen_data(cfg: ExperimentConfig, force: bool = False):
    if cfg.data.n_u == 0:
        raise ConfigError("zero-shot detection needs at least one unseen class (data.n_u > 0)")
    out = Path(cfg.data_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    paths = write_dataset_files(cfg.data, out)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    return paths


def load_trained(cfg: ExperimentConfig, world: World, checkpoint=None) -> ModelParams:
    ckpt = Path(checkpoint) if checkpoint else Path(cfg.run_dir) / "checkpoint.json"
    flat, _, extra = load_checkpoint(ckpt)
    if extra.get("vocabulary") and ClassVocabulary.from_dict(extra["vocabulary"]) != world.vocab:
        raise VocabularyMismatch("checkpoint vocabulary differs from the dataset vocabulary")
    model_cfg = ModelConfig.from_dict(extra["model"]) if extra.get("model") else cfg.model
    return ModelParams.from_flat(flat, model_cfg)


def train_run(cfg: ExperimentConfig):
    world = load_world(cfg, ("train",))
    if "train" not in world.splits:
        raise FileNotFoundError(f"no train split in {cfg.data_dir}")
    run = Path(cfg.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(cfg.to_json() + "\n")
    params, history = train_model(cfg, world, run / "train_log.jsonl", run / "checkpoint.json")
    return params, history


def eval_run(cfg: ExperimentConfig, mode: str, checkpoint=None) -> EvalReport:
    split = EVAL_SPLIT[mode]
    world = load_world(cfg, (split,))
    if split not in world.splits:
        raise FileNotFoundError(f"no {split} split in {cfg.data_dir}")
    params = load_trained(cfg, world, checkpoint)
    dataset = world.splits[split]
    dets = run_detection(cfg, world, params, mode, dataset)
    report = build_report(dets, ground_truth(dataset), world.vocab, cfg.eval.iou_thresholds, mode)
    run = Path(cfg.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    flat_dets = [d for image_id in sorted(dets) for d in dets[image_id]]
    (run / f"detections_{mode}.jsonl").write_text(detections_to_jsonl(flat_dets, world.vocab))
    (run / f"report_{mode}.json").write_text(report.to_json() + "\n")
    report.write_class_csv(run / f"report_{mode}.csv")
    return report


SWEEP_KEYS = {"lambda": "lam", "beta": "beta"}


def _sweep_arm(cfg: ExperimentConfig, world: World, parameter: str, v: float):
    arm = replace(cfg, model=replace(cfg.model, **{SWEEP_KEYS[parameter]: float(v)}))
    key = f"{cfg.eval.iou_thresholds[0]:g}"
    params, _ = train_model(arm, world)
    zsd = evaluate_model(arm, world, params, "zsd")
    gz = evaluate_model(arm, world, params, "gzsd")
    row = {parameter: float(v), "zsd_map": zsd.map_unseen[key],
           "gzsd_seen_map": gz.map_seen[key], "gzsd_unseen_map": gz.map_unseen[key],
           "gzsd_hm": gz.harmonic_mean[key], "zsd_recall100": zsd.recall_at_100[key]}
    log.info("%s=%g zsd=%.4f gzsd_hm=%.4f", parameter, v, row["zsd_map"], row["gzsd_hm"])
    return row


def sweep(cfg: ExperimentConfig, parameter: str, values: Sequence[float], out_path=None,
          world: Optional[World] = None, jobs: int = 1):
    """Train one model per value on a shared dataset and evaluate ZSD and GZSD.
    Returns rows of dicts (one per value) and optionally writes them as CSV.

    Every arm uses the same data and initialization seed, so ``jobs > 1``
    (one process per arm) gives the same rows as a sequential run."""
    if parameter not in SWEEP_KEYS:
        raise ConfigError(f"sweep parameter must be one of {sorted(SWEEP_KEYS)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    world = world if world is not None else build_world(cfg, ("train", "test_zsd", "test_gzsd"))
    if jobs > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_arm, cfg, world, parameter, v) for v in values]
            rows = [f.result() for f in futures]
    else:
        rows = [_sweep_arm(cfg, world, parameter, v) for v in values]
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{x:.6f}" if isinstance(x, float) and k != parameter else x)
                            for k, x in r.items()})
    return rows
