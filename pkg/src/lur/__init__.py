"""Latent uncertainty representation heads and OOD evaluation over frozen latents."""
from ._backend import BACKEND
from .data import LatentDataset, OODSplit, SynthSpec, gen_synthetic, load_latents, make_ood_split, save_latents
from .errors import FormatError, InvalidInputError, LurError, NumericError, TrainingDiverged
from .heads import HeadConfig, Predictions, load_head, save_head, train_head
from .repulsion import KernelConfig, PriorConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FormatError",
    "HeadConfig",
    "InvalidInputError",
    "KernelConfig",
    "LatentDataset",
    "LurError",
    "NumericError",
    "OODSplit",
    "Predictions",
    "PriorConfig",
    "SynthSpec",
    "TrainingDiverged",
    "gen_synthetic",
    "load_head",
    "load_latents",
    "make_ood_split",
    "save_head",
    "save_latents",
    "train_head",
]
