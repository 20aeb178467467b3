"""Fixed-vocabulary prompt tokenizer for the tiny text encoder.

The vocabulary is a versioned text asset, one token per line, with two
escaped entries: "<eot>" (end of text, id 0) and "<sp>" (the space
character). Numbers tokenize digit by digit; words must appear verbatim in
the vocabulary. Checkpoints embed the vocabulary's SHA-256 so a model can
never be paired with the wrong token table.
"""

from __future__ import annotations

import hashlib
from importlib import resources

from .errors import TooLong, UnknownCharacter

VOCAB_ASSET = "vocab_v1.txt"
MAX_TOKENS = 256

EOT = "<eot>"
_ESCAPES = {EOT: EOT, "<sp>": " "}

_PUNCT = set("{}[]():,.-")
_DIGITS = set("0123456789")


def _load_lines() -> list[str]:
    text = resources.files("icmotion.assets").joinpath(VOCAB_ASSET).read_text()
    return [line for line in text.split("\n") if line != ""]


def vocab_bytes() -> bytes:
    return resources.files("icmotion.assets").joinpath(VOCAB_ASSET).read_bytes()


def vocab_hash() -> bytes:
    """SHA-256 of the raw vocabulary asset (32 bytes)."""
    return hashlib.sha256(vocab_bytes()).digest()


class Vocabulary:
    def __init__(self, lines: list[str] | None = None):
        lines = _load_lines() if lines is None else lines
        self.tokens = [_ESCAPES.get(line, line) for line in lines]
        if self.tokens[0] != EOT:
            raise ValueError("vocabulary must start with <eot>")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def eot_id(self) -> int:
        return 0


_DEFAULT: Vocabulary | None = None


def default_vocab() -> Vocabulary:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Vocabulary()
    return _DEFAULT


def _is_word_char(ch: str) -> bool:
    return ch.isascii() and (ch.isalnum() or ch == "_")


def tokenize(s: str, vocab: Vocabulary | None = None) -> list[int]:
    """Text -> token ids, EOT-terminated. Digit-level numbers, word-level keywords.

    Segmentation: maximal [A-Za-z0-9_] runs split into leading digit tokens /
    whole-word lookups; punctuation and spaces are single tokens. Unknown
    characters or words raise UnknownCharacter; streams beyond MAX_TOKENS
    raise TooLong.
    """
    vocab = vocab or default_vocab()
    ids: list[int] = []
    i, n = 0, len(s)
    while i < n:
        ch = s[i]
        if ch in _DIGITS:
            ids.append(vocab.index[ch])
            i += 1
        elif ch.isascii() and (ch.isalpha() or ch == "_"):
            j = i
            while j < n and _is_word_char(s[j]):
                j += 1
            word = s[i:j]
            if word not in vocab.index:
                raise UnknownCharacter(f"word {word!r} not in vocabulary (position {i})")
            ids.append(vocab.index[word])
            i = j
        elif ch in _PUNCT or ch == " ":
            ids.append(vocab.index[ch])
            i += 1
        else:
            raise UnknownCharacter(f"character {ch!r} not in alphabet (position {i})")
    ids.append(vocab.eot_id)
    if len(ids) > MAX_TOKENS:
        raise TooLong(f"{len(ids)} tokens exceeds the {MAX_TOKENS}-token cap")
    return ids


def detokenize(ids: list[int], vocab: Vocabulary | None = None) -> str:
    """Token ids -> text; drops EOT. Inverse of tokenize on its outputs."""
    vocab = vocab or default_vocab()
    parts: list[str] = []
    for tid in ids:
        if not 0 <= tid < len(vocab):
            raise ValueError(f"token id {tid} out of range")
        tok = vocab.tokens[tid]
        if tok != EOT:
            parts.append(tok)
    return "".join(parts)
