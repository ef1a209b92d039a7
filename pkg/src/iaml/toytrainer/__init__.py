"""Desk-scale autoregressive coordinate model on synthetic screens."""
from .identities import verify_kl_decomposition
from .losses import loss_iaml, loss_mle, loss_weighted
from .model import ToyModelParams, init_params
from .screens import SyntheticScreen, gen_screens
from .train import TrainConfig, TrainResult, TrainingDiverged, sweep, train

__all__ = [
    "SyntheticScreen", "ToyModelParams", "TrainConfig", "TrainResult", "TrainingDiverged",
    "gen_screens", "init_params", "loss_iaml", "loss_mle", "loss_weighted", "sweep", "train",
    "verify_kl_decomposition",
]
