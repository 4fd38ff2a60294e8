"""Sequence-only antigen-antibody binding affinity regression.

Dual-stream feature extraction (transformer encoder + 1-d CNN) over
frozen per-residue protein embeddings, with a from-scratch reverse-mode
autodiff core, training loop, evaluation metrics and a CLI.
"""

from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "__version__"]
