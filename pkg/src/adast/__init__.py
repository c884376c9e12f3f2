"""Adversarial domain adaptation with self-training for single-channel sleep staging."""

from .config import ExperimentConfig, load_config
from .model import AdastModel, ArchConfig
from .trainer import run_ablation, run_adast, run_source_only

__all__ = [
    "AdastModel",
    "ArchConfig",
    "ExperimentConfig",
    "load_config",
    "run_ablation",
    "run_adast",
    "run_source_only",
]
