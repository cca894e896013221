"""Input pipeline: images, text, embedded representations and synthetic data."""

from .images import PatchGrid, RawImage, Scene, patchify, read_scene, render_scene, unpatchify
from .representations import (
    InputRepr,
    Modality,
    ReprKind,
    build_image_repr,
    build_pair_repr,
    build_text_repr,
    concat_pair,
)
from .synthetic import DataTask, SyntheticExample, gen_synthetic, generate_example
from .text import PAD, T_CLS, T_MASK, T_SEP, TextTokens, Vocabulary, build_vocab, detokenize, tokenize

__all__ = [
    "DataTask",
    "InputRepr",
    "Modality",
    "PAD",
    "PatchGrid",
    "RawImage",
    "ReprKind",
    "Scene",
    "SyntheticExample",
    "T_CLS",
    "T_MASK",
    "T_SEP",
    "TextTokens",
    "Vocabulary",
    "build_image_repr",
    "build_pair_repr",
    "build_text_repr",
    "build_vocab",
    "concat_pair",
    "detokenize",
    "gen_synthetic",
    "generate_example",
    "patchify",
    "read_scene",
    "render_scene",
    "tokenize",
    "unpatchify",
]
