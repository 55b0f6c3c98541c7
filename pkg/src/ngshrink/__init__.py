"""Gibbs and Haar PX-DA samplers for Normal-Gamma shrinkage regression."""
from .model import ChainState, Dataset, Hyperparams, TauVector
from .chains import ChainKind, RunConfig, SampleTrace, run_chain

__all__ = [
    "ChainState",
    "Dataset",
    "Hyperparams",
    "TauVector",
    "ChainKind",
    "RunConfig",
    "SampleTrace",
    "run_chain",
]
__version__ = "0.1.0"
