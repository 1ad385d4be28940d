"""Cross-modal metric learning with per-pair adversarial domain regularization."""

from .config import RunConfig
from .data import Dataset, FeatureItem, SyntheticSpec, generate_synthetic, split
from .discriminators import Discriminator, DiscriminatorBank
from .encoders import EmbeddedSet, GeneratorParams
from .estimator import ADDRMatcher
from .evaluation import RetrievalReport, domain_confusion, evaluate, recall_at_k, run_ablation
from .similarity import MetricParams
from .trainer import Trainer, TrainerConfig, TrainLog, checkpoint_load, checkpoint_save, resume, train

__all__ = [
    "ADDRMatcher", "RunConfig", "Trainer", "checkpoint_load", "checkpoint_save", "resume",
    "domain_confusion", "run_ablation",
    "Dataset", "FeatureItem", "SyntheticSpec", "generate_synthetic", "split",
    "Discriminator", "DiscriminatorBank", "EmbeddedSet", "GeneratorParams",
    "RetrievalReport", "evaluate", "recall_at_k", "MetricParams",
    "TrainerConfig", "TrainLog", "train",
]

__version__ = "0.1.0"
