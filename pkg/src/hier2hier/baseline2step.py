"""Simplified two-step summarizer: cluster posts into threads, then extract
one post per cluster.

A deliberately plain stand-in for graph-based disentanglement followed by
multi-sentence compression.  Everything is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .rougemetrics import limit_sentences
from .textproc import tokenize

DEFAULT_TAU = 0.2


def tfidf_matrix(texts: Sequence[str]) -> np.ndarray:
    """L2-normalized TF-IDF rows with smoothed idf ``ln((1+N)/(1+df)) + 1``.

    A text without tokens gets an all-zero row.
    """
    docs = [tokenize(t) for t in texts]
    vocab = {w: i for i, w in enumerate(sorted({w for d in docs for w in d}))}
    tf = np.zeros((len(docs), max(len(vocab), 1)))
    for r, d in enumerate(docs):
        for w in d:
            tf[r, vocab[w]] += 1
    df = (tf > 0).sum(axis=0)
    idf = np.log((1 + len(docs)) / (1 + df)) + 1
    x = tf * idf
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _cosine(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Cosine of vector ``x`` with each row of ``c`` (0 for zero rows)."""
    norms = np.linalg.norm(c, axis=-1) * np.linalg.norm(x)
    dots = c @ x
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple[int, ...]  # cluster id per post, numbered by first post
    n_clusters: int

    def members(self, k: int) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == k]


def disentangle(posts: Sequence[str], max_clusters: int = 5, tau: float = DEFAULT_TAU) -> ClusterAssignment:
    """Single pass in post order: join the most similar cluster centroid if the
    cosine is at least ``tau``, otherwise open a new cluster; once
    ``max_clusters`` exist, join the most similar one regardless."""
    if not posts:
        raise DataError("cannot cluster an empty post list")
    if max_clusters < 1:
        raise ValueError(f"max_clusters must be >= 1, got {max_clusters}")
    x = tfidf_matrix(posts)
    sums: list[np.ndarray] = []
    sizes: list[int] = []
    labels = []
    for row in x:
        if sums:
            sims = _cosine(row, np.array(sums) / np.array(sizes)[:, None])
            best = int(np.argmax(sims))
            if sims[best] >= tau or len(sums) >= max_clusters:
                sums[best] = sums[best] + row
                sizes[best] += 1
                labels.append(best)
                continue
        sums.append(row.copy())
        sizes.append(1)
        labels.append(len(sums) - 1)
    return ClusterAssignment(tuple(labels), len(sums))


def compress(cluster_posts: Sequence[str]) -> str:
    """The post closest (cosine) to the cluster's TF-IDF centroid; ties go to
    the earliest post."""
    if not cluster_posts:
        raise DataError("cannot compress an empty cluster")
    x = tfidf_matrix(cluster_posts)
    sims = _cosine(x.mean(axis=0), x) if x.any() else np.zeros(len(cluster_posts))
    return cluster_posts[int(np.argmax(sims))]


def two_step_summarize(
    posts: Sequence[str],
    max_clusters: int = 5,
    word_limit: int | None = 300,
    tau: float = DEFAULT_TAU,
) -> list[str]:
    """One extracted post per cluster, clusters in first-post order.

    The word limit keeps whole sentences while the running word count stays
    within it, so every output sentence is verbatim an input post.
    """
    assignment = disentangle(posts, max_clusters, tau)
    sentences = [compress([posts[i] for i in assignment.members(k)]) for k in range(assignment.n_clusters)]
    return limit_sentences(sentences, word_limit)
