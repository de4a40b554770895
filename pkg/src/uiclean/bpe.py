"""Byte-pair-encoding tokenizer trained on the node text fields of an
ingested corpus.

Tokens start from 256 byte symbols (so any input is tokenizable with no
unknowns) and grow by greedy most-frequent-pair merges until the requested
vocabulary size is reached. Ties break lexicographically, which makes
training deterministic for a fixed corpus.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

SPECIAL_TOKENS = ("<pad>",)

_CAMEL_1 = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_CAMEL_2 = re.compile(r"(?<=[A-Z])(?=[A-Z][a-z])")
_SEPARATORS = re.compile(r"[\s_./:\\\-]+")


def split_words(text: str) -> list[str]:
    """Split on whitespace, '_', '.', '/', ':' and camelCase boundaries;
    lowercase the result. Android identifiers mix all of these."""
    text = _CAMEL_1.sub(" ", text)
    text = _CAMEL_2.sub(" ", text)
    return [w.lower() for w in _SEPARATORS.split(text) if w]


def _byte_token(value: int) -> str:
    if 33 <= value <= 126:
        return chr(value)
    return f"<0x{value:02X}>"


_BYTE_TOKENS = tuple(_byte_token(i) for i in range(256))


def word_to_symbols(word: str) -> list[str]:
    return [_BYTE_TOKENS[b] for b in word.encode("utf-8")]


@dataclass
class TokenizerModel:
    merges: list[tuple[str, str]]
    vocab: dict[str, int]
    vocab_size: int
    specials: tuple[str, ...] = SPECIAL_TOKENS
    corpus_hash: str = ""
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._ranks:
            self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    def encode_word(self, word: str) -> list[int]:
        symbols = word_to_symbols(word)
        while len(symbols) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(symbols, symbols[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, pair
            if best_pair is None:
                break
            symbols = _merge_sequence(symbols, best_pair)
        return [self.vocab[s] for s in symbols]

    def encode_words(self, words: Iterable[str]) -> list[int]:
        ids: list[int] = []
        for word in words:
            ids.extend(self.encode_word(word))
        return ids

    def encode_text(self, text: str, max_words: int | None = None) -> list[int]:
        words = split_words(text)
        if max_words is not None:
            words = words[:max_words]
        return self.encode_words(words)

    def save(self, path: str | Path) -> None:
        payload = {
            "merges": [list(pair) for pair in self.merges],
            "vocab": self.vocab,
            "vocab_size": self.vocab_size,
            "specials": list(self.specials),
            "corpus_hash": self.corpus_hash,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TokenizerModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            merges=[tuple(pair) for pair in payload["merges"]],
            vocab={k: int(v) for k, v in payload["vocab"].items()},
            vocab_size=int(payload["vocab_size"]),
            specials=tuple(payload["specials"]),
            corpus_hash=payload["corpus_hash"],
        )


def _merge_sequence(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    merged = pair[0] + pair[1]
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def train_bpe(
    corpus: Iterable[str],
    vocab_size: int,
    specials: tuple[str, ...] = SPECIAL_TOKENS,
) -> TokenizerModel:
    """Learn merges by repeatedly fusing the most frequent adjacent symbol
    pair (ties broken by lexicographically smallest pair)."""
    base_size = 256 + len(specials)
    if vocab_size < base_size:
        raise ValueError(f"vocab_size must be at least {base_size} (256 bytes + specials)")

    word_counts: Counter[str] = Counter()
    for text in corpus:
        word_counts.update(split_words(text))

    sequences: dict[str, list[str]] = {w: word_to_symbols(w) for w in word_counts}
    corpus_hash = hashlib.sha256(
        json.dumps(sorted(word_counts.items())).encode("utf-8")
    ).hexdigest()

    merges: list[tuple[str, str]] = []
    while base_size + len(merges) < vocab_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for word, symbols in sequences.items():
            count = word_counts[word]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        best_pair = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best_pair)
        for word in sequences:
            if best_pair[0] in sequences[word]:
                sequences[word] = _merge_sequence(sequences[word], best_pair)

    vocab: dict[str, int] = {}
    for token in specials:
        vocab[token] = len(vocab)
    for token in _BYTE_TOKENS:
        vocab[token] = len(vocab)
    for a, b in merges:
        # Distinct merge paths can concatenate to the same string; ids stay
        # dense by reusing the existing entry.
        if a + b not in vocab:
            vocab[a + b] = len(vocab)

    return TokenizerModel(
        merges=merges,
        vocab=vocab,
        vocab_size=len(vocab),
        specials=specials,
        corpus_hash=corpus_hash,
    )
