"""Seeded generator of small abstract/title style source corpora.

Stands in for PubMed when no real corpus is at hand.  Every document is built
around three topic words drawn from a pool of pronounceable pseudo-words; its
sentences mention those words in varying roles and its one-line title names
them in a fixed pattern, so a summarizer can learn the mapping.
"""

from __future__ import annotations

import numpy as np

from .corpusforge import SourceDocument

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kl", "st", "tr")
_VOWELS = ("a", "e", "i", "o", "u")

SENTENCE_TEMPLATES = (
    "we measured {0} levels in {1} patients .",
    "the {0} group showed increased {2} .",
    "{1} was associated with {0} in this cohort .",
    "results suggest that {2} modulates {1} .",
    "a total of {n} subjects received {0} .",
    "no significant change in {2} was observed .",
    "these findings support {0} as a marker of {1} .",
    "samples were analysed for {1} and {2} .",
    "{2} expression declined after {0} treatment .",
    "the role of {1} remains unclear .",
)

TITLE_TEMPLATES = (
    "effect of {0} on {1} in {2} .",
    "{0} and {1} : a study of {2} .",
    "role of {0} in {1} {2} .",
)

_NUMBERS = ("12", "24", "40", "56", "102", "150")


def pseudo_words(count: int, seed: int = 0) -> list[str]:
    """``count`` distinct two- or three-syllable pseudo-words."""
    rng = np.random.default_rng([seed, 7919])
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        n_syll = 2 if rng.random() < 0.7 else 3
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syll))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def make_documents(
    n_docs: int,
    seed: int = 0,
    n_keywords: int = 120,
    min_sentences: int = 2,
    max_sentences: int = 7,
) -> list[SourceDocument]:
    """Generate ``n_docs`` documents with ids ``doc00000``, ``doc00001``, ..."""
    pool = pseudo_words(n_keywords, seed)
    rng = np.random.default_rng([seed, 1])
    docs = []
    for i in range(n_docs):
        keys = [pool[j] for j in rng.choice(n_keywords, size=3, replace=False)]
        n_sent = int(rng.integers(min_sentences, max_sentences, endpoint=True))
        picks = rng.choice(len(SENTENCE_TEMPLATES), size=n_sent, replace=n_sent > len(SENTENCE_TEMPLATES))
        sentences = tuple(
            SENTENCE_TEMPLATES[p].format(*keys, n=_NUMBERS[rng.integers(len(_NUMBERS))]) for p in picks
        )
        title = TITLE_TEMPLATES[rng.integers(len(TITLE_TEMPLATES))].format(*keys)
        docs.append(SourceDocument(f"doc{i:05d}", title, sentences))
    return docs
