"""Synthetic interleaved text-summary corpora built from document-summary pairs.

Each window of source documents yields one interleaved example: a random
number of documents is selected, a random-length prefix of each one's
sentences becomes a thread, and the threads are merged post by post in random
order while each thread keeps its own sentence order.  The summary lists the
selected documents' titles in order of first appearance.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .textproc import tokenize

logger = logging.getLogger(__name__)

# a = min threads, b = max threads, m = min posts per thread, n = max posts per thread
PRESETS = {
    "hard": dict(a=2, b=5, m=2, n=5),
    "ami-like": dict(a=8, b=12),
}

TRAIN_VALID_TEST = (170, 4, 4)


@dataclass(frozen=True)
class SourceDocument:
    id: str
    summary: str
    sentences: tuple[str, ...]

    def __post_init__(self):
        if not self.sentences:
            raise DataError(f"document {self.id!r} has no sentences")
        if not self.summary.strip():
            raise DataError(f"document {self.id!r} has an empty summary")


@dataclass(frozen=True)
class SynthConfig:
    a: int
    b: int
    m: int
    n: int
    w: int | None = None
    t: int | None = None
    seed: int = 0

    def __post_init__(self):
        # unspecified window defaults: w = 2b, t = b
        if self.w is None:
            object.__setattr__(self, "w", 2 * self.b)
        if self.t is None:
            object.__setattr__(self, "t", self.b)
        if not (1 <= self.a <= self.b <= self.w):
            raise ConfigError(f"need 1 <= a <= b <= w, got a={self.a} b={self.b} w={self.w}")
        if not (1 <= self.m <= self.n):
            raise ConfigError(f"need 1 <= m <= n, got m={self.m} n={self.n}")
        if self.t < 1:
            raise ConfigError(f"step size t must be >= 1, got {self.t}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a non-negative 64-bit integer")

    @classmethod
    def preset(cls, name: str, **overrides) -> "SynthConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        values = {**PRESETS[name], **{k: v for k, v in overrides.items() if v is not None}}
        missing = {"m", "n"} - values.keys()
        if missing:
            raise ConfigError(f"preset {name!r} needs explicit {sorted(missing)}")
        return cls(**values)

    @property
    def max_posts(self) -> int:
        return self.b * self.n

    @property
    def max_threads(self) -> int:
        return self.b


@dataclass
class InterleavedExample:
    posts: list[str]
    thread_ids: list[int]
    summary: list[str]
    source_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.posts) != len(self.thread_ids):
            raise DataError(f"{len(self.posts)} posts but {len(self.thread_ids)} thread ids")

    @property
    def n_threads(self) -> int:
        return len(set(self.thread_ids))

    def first_appearance(self) -> list[int]:
        order: list[int] = []
        for k in self.thread_ids:
            if k not in order:
                order.append(k)
        return order

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_dict(cls, obj: dict) -> "InterleavedExample":
        posts = obj.get("posts")
        if not isinstance(posts, list):
            raise DataError("example is missing a 'posts' list")
        return cls(
            posts=[str(p) for p in posts],
            thread_ids=[int(k) for k in obj.get("thread_ids", [0] * len(posts))],
            summary=[str(s) for s in obj.get("summary", [])],
            source_ids=[str(s) for s in obj.get("source_ids", [])],
        )


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def load_corpus(path: str | Path) -> list[SourceDocument]:
    """Read a JSONL corpus of ``{"id", "summary", "sentences"}`` records."""
    docs: list[SourceDocument] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            for key, kind in (("id", str), ("summary", str), ("sentences", list)):
                if key not in obj:
                    raise DataError(f"{path}:{lineno}: missing field {key!r}")
                if not isinstance(obj[key], kind):
                    raise DataError(f"{path}:{lineno}: field {key!r} must be {kind.__name__}")
            if not obj["sentences"]:
                raise DataError(f"{path}:{lineno}: document {obj['id']!r} has an empty sentence list")
            if obj["id"] in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            try:
                docs.append(SourceDocument(obj["id"], obj["summary"], tuple(str(s) for s in obj["sentences"])))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return docs


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_corpus(docs: Iterable[SourceDocument], path: str | Path) -> None:
    lines = (json.dumps({"id": d.id, "summary": d.summary, "sentences": list(d.sentences)}, ensure_ascii=False) for d in docs)
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_dataset(examples: Iterable[InterleavedExample], path: str | Path) -> None:
    atomic_write_text(path, "".join(ex.to_json() + "\n" for ex in examples))


def read_dataset(path: str | Path) -> list[InterleavedExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(InterleavedExample.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# windowing and interleaving
# ---------------------------------------------------------------------------


def window_count(n_docs: int, w: int, t: int) -> int:
    if w > n_docs:
        raise DataError(f"window size {w} exceeds corpus size {n_docs}")
    return (n_docs - w) // t + 1


def window(corpus: Sequence[SourceDocument], w: int, t: int) -> Iterator[Sequence[SourceDocument]]:
    """Yield ``(N - w) // t + 1`` windows; window k covers ``corpus[k*t : k*t + w]``."""
    count = window_count(len(corpus), w, t)
    for k in range(count):
        yield corpus[k * t : k * t + w]


def _norm_title(title: str) -> str:
    return " ".join(title.split())


def window_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def interleave_window(docs: Sequence[SourceDocument], cfg: SynthConfig, rng: np.random.Generator) -> InterleavedExample | None:
    """Build one example from one window, or ``None`` if it cannot supply ``a`` threads."""
    if len(docs) < cfg.a:
        raise DataError(f"window of {len(docs)} documents cannot supply a={cfg.a} threads")
    order = rng.permutation(len(docs))
    r = int(rng.integers(cfg.a, cfg.b, endpoint=True))

    # selection
    chosen: list[SourceDocument] = []
    titles: set[str] = set()
    for idx in order:
        doc = docs[idx]
        key = _norm_title(doc.summary)
        if len(doc.sentences) < cfg.m or key in titles:
            continue
        chosen.append(doc)
        titles.add(key)
        if len(chosen) == r:
            break
    if len(chosen) < cfg.a:
        return None
    threads = []
    pool: list[int] = []
    for j, doc in enumerate(chosen):
        q = min(int(rng.integers(cfg.m, cfg.n, endpoint=True)), len(doc.sentences))
        threads.append(doc.sentences[:q])
        pool.extend([j] * q)

    # interleaving: draw a thread index from the remaining multiset, emit its next post
    posts, thread_ids, summary = [], [], []
    emitted = [0] * len(chosen)
    in_summary: set[str] = set()
    for _ in range(len(pool)):
        pos = int(rng.integers(len(pool)))
        k = pool[pos]
        pool[pos] = pool[-1]
        pool.pop()
        posts.append(threads[k][emitted[k]])
        emitted[k] += 1
        thread_ids.append(k)
        title = chosen[k].summary
        if _norm_title(title) not in in_summary:
            in_summary.add(_norm_title(title))
            summary.append(title)
    return InterleavedExample(posts, thread_ids, summary, [d.id for d in chosen])


def interleave(corpus: Sequence[SourceDocument], cfg: SynthConfig) -> list[InterleavedExample]:
    """One interleaved example per window, windows processed in index order."""
    if not corpus:
        raise DataError("empty corpus")
    out = []
    for k, docs in enumerate(window(corpus, cfg.w, cfg.t)):
        ex = interleave_window(docs, cfg, window_rng(cfg.seed, k))
        if ex is None:
            logger.warning("window %d: fewer than a=%d eligible documents, skipped", k, cfg.a)
            continue
        out.append(ex)
    return out


def disentangle_gold(example: InterleavedExample) -> InterleavedExample:
    """Thread-sorted copy: threads concatenated in first-appearance order."""
    posts, tids = [], []
    for k in example.first_appearance():
        for post, tid in zip(example.posts, example.thread_ids):
            if tid == k:
                posts.append(post)
                tids.append(tid)
    return InterleavedExample(posts, tids, list(example.summary), list(example.source_ids))


def split_dataset(
    examples: Sequence[InterleavedExample], ratios: Sequence[int] = TRAIN_VALID_TEST
) -> tuple[list[InterleavedExample], list[InterleavedExample], list[InterleavedExample]]:
    """Contiguous train/valid/test split with sizes proportional to ``ratios``."""
    total = sum(ratios)
    n = len(examples)
    n_valid = max(1, round(n * ratios[1] / total)) if n >= 3 else 0
    n_test = max(1, round(n * ratios[2] / total)) if n >= 3 else 0
    n_train = n - n_valid - n_test
    return list(examples[:n_train]), list(examples[n_train : n_train + n_valid]), list(examples[n_train + n_valid :])


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

PERCENTILES = (10, 25, 50, 75, 90)


@dataclass
class CorpusStats:
    thread_counts: np.ndarray
    posts_per_thread: np.ndarray
    post_lengths: np.ndarray
    summary_sentences: np.ndarray
    summary_words: np.ndarray

    _FIELDS = ("thread_counts", "posts_per_thread", "post_lengths", "summary_sentences", "summary_words")

    @property
    def n_examples(self) -> int:
        return len(self.thread_counts)

    @property
    def median_threads(self) -> float:
        return float(np.median(self.thread_counts))

    def distribution(self, name: str) -> dict[int, float]:
        values = getattr(self, name)
        counts = Counter(int(v) for v in values)
        return {k: counts[k] / len(values) for k in sorted(counts)}

    def percentile_table(self, percentiles: Sequence[float] = PERCENTILES) -> dict[str, dict[float, float]]:
        return {
            name: {p: float(np.percentile(getattr(self, name), p)) for p in percentiles} for name in self._FIELDS
        }

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "median_threads": self.median_threads,
            "distributions": {name: self.distribution(name) for name in ("thread_counts", "posts_per_thread", "summary_sentences")},
            "percentiles": {name: {str(p): v for p, v in row.items()} for name, row in self.percentile_table().items()},
        }


def corpus_stats(dataset: Sequence[InterleavedExample]) -> CorpusStats:
    if not dataset:
        raise DataError("corpus_stats needs a non-empty dataset")
    threads, per_thread, lengths, sents, words = [], [], [], [], []
    for ex in dataset:
        counts = Counter(ex.thread_ids)
        threads.append(len(counts))
        per_thread.extend(counts.values())
        lengths.extend(len(tokenize(p)) for p in ex.posts)
        sents.append(len(ex.summary))
        words.append(sum(len(tokenize(s)) for s in ex.summary))
    return CorpusStats(*(np.asarray(v) for v in (threads, per_thread, lengths, sents, words)))
