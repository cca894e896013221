"""Byte-level text tokenizer with a small word lexicon for synthetic captions.

Id layout: 0..3 are the specials T_CLS, T_SEP, T_MASK and PAD, 4..259 are the
256 byte values, and lexicon words follow from 260. A string whose
whitespace-separated words are all in the lexicon (single spaces, no leading
or trailing whitespace) encodes as word ids; anything else falls back to one
id per UTF-8 byte.
"""

from typing import Dict, List, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import ConfigurationError

T_CLS = 0
T_SEP = 1
T_MASK = 2
PAD = 3
NUM_SPECIALS = 4
BYTE_OFFSET = NUM_SPECIALS
LEXICON_OFFSET = BYTE_OFFSET + 256

SPECIAL_NAMES = ("[T_CLS]", "[T_SEP]", "[T_MASK]", "[PAD]")

CAPTION_LEXICON: Tuple[str, ...] = (
    # counts
    "zero",
    "one",
    "two",
    "three",
    # colors
    "red",
    "green",
    "blue",
    # shapes
    "circle",
    "square",
    "triangle",
    "circles",
    "squares",
    "triangles",
    "shape",
    "shapes",
    # positions
    "top",
    "bottom",
    "left",
    "right",
    # glue
    "a",
    "and",
    "is",
    "the",
    "what",
    "color",
    "how",
    "many",
    "there",
    "image",
    "images",
    "has",
    "have",
    "more",
    "both",
    "contain",
    "contains",
    "same",
    "number",
    "of",
    "yes",
    "no",
)


class Vocabulary(BaseModel):
    """Specials, bytes, then the caption lexicon."""

    model_config = ConfigDict(frozen=True)

    words: Tuple[str, ...] = CAPTION_LEXICON

    @model_validator(mode="after")
    def _unique_words(self) -> "Vocabulary":
        if len(set(self.words)) != len(self.words):
            raise ValueError("lexicon words must be unique")
        if any(not w or any(ch.isspace() for ch in w) for w in self.words):
            raise ValueError("lexicon words must be non-empty and contain no whitespace")
        return self

    @property
    def size(self) -> int:
        return LEXICON_OFFSET + len(self.words)

    @property
    def word_ids(self) -> Dict[str, int]:
        return {w: LEXICON_OFFSET + i for i, w in enumerate(self.words)}

    def word_id(self, word: str) -> int:
        return LEXICON_OFFSET + self.words.index(word)

    def token_string(self, token_id: int) -> str:
        if 0 <= token_id < NUM_SPECIALS:
            return SPECIAL_NAMES[token_id]
        if token_id < LEXICON_OFFSET:
            return f"<0x{token_id - BYTE_OFFSET:02x}>"
        return self.words[token_id - LEXICON_OFFSET]


class TextTokens(BaseModel):
    """Token ids of one text, without the T_CLS / T_SEP framing."""

    model_config = ConfigDict(frozen=True)

    ids: Tuple[int, ...] = Field(default_factory=tuple)

    @property
    def M(self) -> int:  # noqa: N802
        return len(self.ids)


def build_vocab(words: Sequence[str] = CAPTION_LEXICON) -> Vocabulary:
    return Vocabulary(words=tuple(words))


def tokenize(text: str, vocab: Vocabulary) -> TextTokens:
    """Encode ``text``; lexicon sentences become word ids, everything else bytes."""
    if not text:
        return TextTokens(ids=())
    words = text.split(" ")
    lookup = vocab.word_ids
    if all(w in lookup for w in words):
        return TextTokens(ids=tuple(lookup[w] for w in words))
    return TextTokens(ids=tuple(BYTE_OFFSET + b for b in text.encode("utf-8")))


def detokenize(tokens: TextTokens, vocab: Vocabulary) -> str:
    """Inverse of ``tokenize``. Specials are rendered by name."""
    pieces: List[str] = []
    pending = bytearray()

    def flush() -> None:
        if pending:
            pieces.append(pending.decode("utf-8", errors="replace"))
            pending.clear()

    for token_id in tokens.ids:
        if BYTE_OFFSET <= token_id < LEXICON_OFFSET:
            pending.append(token_id - BYTE_OFFSET)
            continue
        flush()
        pieces.append(vocab.token_string(token_id))
    flush()

    if all(BYTE_OFFSET <= t < LEXICON_OFFSET for t in tokens.ids):
        return "".join(pieces)
    return " ".join(pieces)


def frame(tokens: TextTokens, table_size: int) -> List[int]:
    """``[T_CLS] ids [T_SEP]``, truncated to ``table_size`` with T_SEP kept last."""
    if table_size < 2:
        raise ConfigurationError("a text position table needs room for T_CLS and T_SEP")
    body = list(tokens.ids[: table_size - 2])
    return [T_CLS] + body + [T_SEP]


def clip_tokens(tokens: TextTokens, table_size: int) -> TextTokens:
    """Drop tokens that would not fit between T_CLS and T_SEP."""
    if tokens.M <= table_size - 2:
        return tokens
    return TextTokens(ids=tokens.ids[: table_size - 2])
