"""Minimal deterministic CNN engine: NCHW numpy forward/backward + SGD."""

from .gradcheck import grad_check
from .io import ModelFormatError, load_model, save_model
from .layers import (LayerSpec, ShapeError, concat, conv2d, dense, infer_shapes,
                     maxpool2d, relu, softmax, upsample2d)
from .losses import loss_pixel_ce, loss_softmax_ce, loss_sse
from .model import Model, backward, build_model, forward
from .optim import SGD, TrainingDivergedError, sgd_step
from .train import Hyper, TrainResult, fit

__all__ = [
    "LayerSpec", "ShapeError", "conv2d", "maxpool2d", "relu", "dense",
    "upsample2d", "softmax", "concat", "infer_shapes",
    "Model", "build_model", "forward", "backward",
    "loss_softmax_ce", "loss_pixel_ce", "loss_sse",
    "SGD", "sgd_step", "TrainingDivergedError",
    "grad_check", "save_model", "load_model", "ModelFormatError",
    "Hyper", "TrainResult", "fit",
]
