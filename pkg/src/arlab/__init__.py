"""Adversarial robustness and generalization: a small numpy laboratory."""
from .model import Network, forward, init_network, load_checkpoint, save_checkpoint
from .numerics import SeededRng, singular_values, spectral_norm, svd

__all__ = ["Network", "SeededRng", "forward", "init_network", "load_checkpoint", "save_checkpoint",
           "singular_values", "spectral_norm", "svd"]
__version__ = "0.1.0"
