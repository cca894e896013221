"""Discrete visual tokens for masked image modeling."""

from .codebook import Codebook, quantize, quantize_patches, train_codebook

__all__ = ["Codebook", "quantize", "quantize_patches", "train_codebook"]
