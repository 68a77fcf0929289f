"""Zero-shot object detection head with class-similarity supervision,
two-path region-category scoring and region-region contrastive embedding,
trained with hand-written numpy backprop on a synthetic proposal benchmark."""
from .evaluation import EvalReport, GroundTruth, build_report
from .experiment import ExperimentConfig, build_world, evaluate_model, train_model
from .inference import Detection, detect, fuse_scores
from .model import ModelConfig, ModelParams
from .semantics import ClassVocabulary, SemanticTable, build_similarity_matrix
from .synthdata import SynthConfig, SynthDataset

__version__ = "0.1.0"

__all__ = [
    "ClassVocabulary", "Detection", "EvalReport", "ExperimentConfig", "GroundTruth",
    "ModelConfig", "ModelParams", "SemanticTable", "SynthConfig", "SynthDataset",
    "build_report", "build_similarity_matrix", "build_world", "detect", "evaluate_model",
    "fuse_scores", "train_model",
]
