"""Analysis discriminative dictionary learning.

Jointly learns class-wise synthesis dictionaries, analysis projections
that extract their codes, and a linear classifier on the projected codes.
"""

__version__ = "0.1.0"

from addl.dataset import LabeledDataset, load_dataset, save_dataset, synth_generate
from addl.model import AddlModel, Hyperparams, load_model, save_model
from addl.trainer import TrainOptions, train
from addl.classifier import predict, predict_residual, soft_labels

__all__ = [
    "AddlModel", "Hyperparams", "LabeledDataset", "TrainOptions",
    "load_dataset", "load_model", "predict", "predict_residual", "save_dataset",
    "save_model", "soft_labels", "synth_generate", "train",
]
