"""Minimal numpy network engine with manual backpropagation."""

from ctkit.nn.checkpoint import load_network, save_network
from ctkit.nn.layers import ELU, Concat, Conv2D, Dense, Layer, LayerKind, LeakyReLU, ReLU, Reshape
from ctkit.nn.losses import mse_loss
from ctkit.nn.network import Network
from ctkit.nn.optim import AdamState, adam_step, sgd_step

__all__ = [
    "ELU", "Concat", "Conv2D", "Dense", "Layer", "LayerKind", "LeakyReLU", "ReLU", "Reshape",
    "Network", "mse_loss", "AdamState", "adam_step", "sgd_step", "load_network", "save_network",
]
