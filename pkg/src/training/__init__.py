"""
Losses, the training loop, reconstruction and experiment runners
"""
from .losses import loss_dice, loss_intensity, loss_total
from .reconstruct import reconstruct, reconstruct_from_checkpoint
from .trainer import FreezeMask, RunLog, Trainer, train
from .transfer import frozen_decoder_transfer, run_transfer

__all__ = [
    "loss_intensity",
    "loss_dice",
    "loss_total",
    "FreezeMask",
    "RunLog",
    "Trainer",
    "train",
    "reconstruct",
    "reconstruct_from_checkpoint",
    "frozen_decoder_transfer",
    "run_transfer",
]
