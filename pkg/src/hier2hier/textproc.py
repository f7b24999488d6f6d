"""Tokenization, vocabularies (word and BPE subword) and id encoding."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "‹pad›", "‹unk›", "‹bos›", "‹eos›"
RESERVED = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
END_OF_WORD = "</w>"

# words may carry inner hyphens/apostrophes ("infra-red", "it's"); other punctuation stands alone
_TOKEN_RE = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Token/id bijection with four reserved ids in front.

    ``max_size`` counts corpus tokens only; the reserved ids come on top.
    """

    tokens: tuple[str, ...]
    max_size: int

    def __post_init__(self):
        if len(self.tokens) > self.max_size:
            raise DataError(f"{len(self.tokens)} tokens exceed max_size={self.max_size}")
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("vocabulary tokens must be unique")
        if set(self.tokens) & set(RESERVED):
            raise DataError("vocabulary tokens collide with reserved tokens")
        object.__setattr__(self, "_index", {t: i + len(RESERVED) for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens) + len(RESERVED)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        idx = int(idx)
        if idx < 0 or idx >= len(self):
            raise DataError(f"id {idx} outside vocabulary of size {len(self)}")
        if idx < len(RESERVED):
            return RESERVED[idx]
        return self.tokens[idx - len(RESERVED)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    def dumps(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    @classmethod
    def loads(cls, text: str, max_size: int | None = None) -> "Vocabulary":
        tokens = tuple(line for line in text.split("\n") if line != "")
        return cls(tokens, max_size if max_size is not None else max(len(tokens), 1))

    @classmethod
    def load(cls, path: str | Path, max_size: int | None = None) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"), max_size)


def build_vocab(streams: Iterable[Iterable[str]], max_size: int) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens; ties go to the smaller string."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    counts: Counter[str] = Counter()
    for stream in streams:
        counts.update(t for t in stream if t not in RESERVED)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tuple(t for t, _ in ranked[:max_size]), max_size)


def encode_ids(tokens: Sequence[str], vocab: Vocabulary, pad_to: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Map tokens to ids, optionally right-padded with PAD; returns ``(ids, mask)``."""
    ids = [vocab.id(t) for t in tokens]
    length = len(ids)
    if pad_to is not None:
        if pad_to < length:
            raise ValueError(f"pad_to={pad_to} shorter than {length} tokens")
        ids += [PAD] * (pad_to - length)
    mask = np.zeros(len(ids), dtype=np.int8)
    mask[:length] = 1
    return np.asarray(ids, dtype=np.int64), mask


def decode_ids(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    """Ids back to tokens, dropping PAD, BOS and EOS."""
    out = []
    for i in ids:
        tok = vocab.token(i)
        if int(i) in (PAD, BOS, EOS):
            continue
        out.append(tok)
    return out


# ---------------------------------------------------------------------------
# byte pair encoding
# ---------------------------------------------------------------------------


def _word_symbols(word: str) -> tuple[str, ...]:
    chars = list(word)
    chars[-1] = chars[-1] + END_OF_WORD
    return tuple(chars)


def _base(symbol: str) -> str:
    return symbol[: -len(END_OF_WORD)] if symbol.endswith(END_OF_WORD) else symbol


def _pairs(symbols: tuple[str, ...]):
    # the end-of-word marker rides on the final symbol but is invisible to pair matching
    return zip(map(_base, symbols), map(_base, symbols[1:]))


def _merge_pair(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and _base(symbols[i]) == pair[0] and _base(symbols[i + 1]) == pair[1]:
            out.append(pair[0] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


@dataclass(frozen=True)
class BpeModel:
    """Ordered merge list.

    The end-of-word marker is appended to each word's last symbol; merges are
    stated on unmarked symbols and apply whether or not the right-hand symbol
    ends the word.
    """

    merges: tuple[tuple[str, str], ...]
    _ranks: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise DataError("BPE merges must be unique")
        object.__setattr__(self, "_ranks", {p: i for i, p in enumerate(self.merges)})

    def encode_word(self, word: str) -> list[str]:
        if not word:
            return []
        symbols = _word_symbols(word)
        while len(symbols) > 1:
            best = min(
                ((self._ranks[p], p) for p in _pairs(symbols) if p in self._ranks),
                default=None,
            )
            if best is None:
                break
            symbols = _merge_pair(symbols, best[1])
        return list(symbols)

    def encode(self, words: Sequence[str]) -> list[str]:
        out: list[str] = []
        for w in words:
            out.extend(self.encode_word(w))
        return out

    @staticmethod
    def decode(symbols: Sequence[str]) -> list[str]:
        words, buf = [], []
        for s in symbols:
            if s.endswith(END_OF_WORD):
                buf.append(s[: -len(END_OF_WORD)])
                words.append("".join(buf))
                buf = []
            else:
                buf.append(s)
        if buf:
            words.append("".join(buf))
        return words

    def vocabulary(self, words: Iterable[str]) -> set[str]:
        """Subword types needed to encode ``words``."""
        return {s for w in words for s in self.encode_word(w)}

    def dumps(self) -> str:
        return "".join(f"{a} {b}\n" for a, b in self.merges)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "BpeModel":
        merges = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise DataError(f"BPE line {lineno}: expected 'left right', got {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(tuple(merges))

    @classmethod
    def load(cls, path: str | Path) -> "BpeModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def learn_bpe(word_freqs: Mapping[str, int], num_merges: int) -> BpeModel:
    """Greedy BPE: merge the most frequent adjacent pair, ties to the smaller pair."""
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    words = {_word_symbols(w): c for w, c in word_freqs.items() if w and c > 0}
    if not words:
        raise DataError("cannot learn BPE from an empty frequency table")
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pairs: Counter[tuple[str, str]] = Counter()
        for symbols, count in words.items():
            for p in _pairs(symbols):
                pairs[p] += count
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        merged: dict[tuple[str, ...], int] = {}
        for symbols, count in words.items():
            new = _merge_pair(symbols, best)
            merged[new] = merged.get(new, 0) + count
        words = merged
    return BpeModel(tuple(merges))


# ---------------------------------------------------------------------------
# text <-> model token streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TextCodec:
    """Turns raw text into model tokens (words or BPE subwords) and back."""

    vocab: Vocabulary
    bpe: BpeModel | None = None

    @property
    def mode(self) -> str:
        return "word" if self.bpe is None else "bpe"

    def tokens(self, text: str) -> list[str]:
        words = tokenize(text)
        return words if self.bpe is None else self.bpe.encode(words)

    def ids(self, text: str, limit: int | None = None) -> list[int]:
        toks = self.tokens(text)
        if limit is not None:
            toks = toks[:limit]
        return [self.vocab.id(t) for t in toks]

    def text(self, ids: Iterable[int]) -> str:
        toks = decode_ids(ids, self.vocab)
        if self.bpe is not None:
            toks = BpeModel.decode(toks)
        return " ".join(toks)


def build_codec(texts: Iterable[str], max_size: int = 8000, mode: str = "word", bpe_merges: int = 2000) -> TextCodec:
    texts = list(texts)
    if mode == "word":
        return TextCodec(build_vocab((tokenize(t) for t in texts), max_size))
    if mode != "bpe":
        raise ValueError(f"unknown vocabulary mode {mode!r}")
    freqs: Counter[str] = Counter()
    for t in texts:
        freqs.update(tokenize(t))
    bpe = learn_bpe(freqs, bpe_merges)
    vocab = build_vocab((bpe.encode(tokenize(t)) for t in texts), max_size)
    logger.info("BPE codec: %d merges, %d subword types", len(bpe.merges), len(vocab) - len(RESERVED))
    return TextCodec(vocab, bpe)
