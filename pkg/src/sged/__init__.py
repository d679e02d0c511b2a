"""Speaker-guided encoder-decoder for emotion recognition in conversation."""

from .data import Conversation, Dataset, SyntheticSpec, Utterance, generate_synthetic, parse_jsonl
from .metrics import EvalReport
from .model import ModelConfig, SGEDModel
from .train import TrainConfig, evaluate, run_ablation_suite, train

__version__ = "0.1.0"

__all__ = [
    "Conversation",
    "Dataset",
    "EvalReport",
    "ModelConfig",
    "SGEDModel",
    "SyntheticSpec",
    "TrainConfig",
    "Utterance",
    "evaluate",
    "generate_synthetic",
    "parse_jsonl",
    "run_ablation_suite",
    "train",
]
