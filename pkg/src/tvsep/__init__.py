"""Variational EM separation of time-varying convolutive audio mixtures."""

from .nmf import NmfModel
from .stft import TfTensor, analyze, synthesize
from .vem import SeparationResult, VemConfig, make_init, run_vem

__all__ = [
    "NmfModel",
    "SeparationResult",
    "TfTensor",
    "VemConfig",
    "analyze",
    "make_init",
    "run_vem",
    "synthesize",
]
__version__ = "0.1.0"
