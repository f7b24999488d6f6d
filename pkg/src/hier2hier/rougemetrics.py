"""ROUGE-1/2/L and summary statistics.

Scores use clipped n-gram counts and the longest common subsequence over
lowercased tokens from :func:`hier2hier.textproc.tokenize`.  Multi-sentence
summaries are flattened (sentence boundaries ignored) and corpus scores are
macro averages over example pairs.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .textproc import tokenize

Tokens = Sequence[str]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_cand: int, n_ref: int) -> "RougeScore":
        p = overlap / n_cand if n_cand else 0.0
        r = overlap / n_ref if n_ref else 0.0
        return cls(p, r, f_measure(p, r))

    def to_dict(self) -> dict:
        return {"p": self.precision, "r": self.recall, "f1": self.f1}


def f_measure(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _tokens(x: str | Tokens) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str | Tokens, reference: str | Tokens, n: int = 1) -> RougeScore:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand, ref = ngrams(_tokens(candidate), n), ngrams(_tokens(reference), n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str | Tokens, reference: str | Tokens) -> RougeScore:
    cand, ref = _tokens(candidate), _tokens(reference)
    return RougeScore.from_counts(lcs_length(cand, ref), len(cand), len(ref))


def flatten(summary: str | Sequence[str], word_limit: int | None = None) -> list[str]:
    """All tokens of a (multi-sentence) summary, cut to ``word_limit``."""
    sentences = [summary] if isinstance(summary, str) else summary
    toks = [t for s in sentences for t in tokenize(s)]
    return toks if word_limit is None else toks[:word_limit]


def limit_sentences(sentences: Sequence[str], word_limit: int | None) -> list[str]:
    """Leading whole sentences whose running word count stays within the limit."""
    if word_limit is None:
        return list(sentences)
    out, used = [], 0
    for s in sentences:
        n = len(tokenize(s))
        if used + n > word_limit:
            break
        out.append(s)
        used += n
    return out


@dataclass(frozen=True)
class CorpusRouge:
    rouge1: RougeScore
    rouge2: RougeScore
    rougeL: RougeScore
    n_pairs: int
    word_limit: int | None

    def to_dict(self) -> dict:
        return {"rouge1": self.rouge1.to_dict(), "rouge2": self.rouge2.to_dict(), "rougeL": self.rougeL.to_dict()}


def _mean_score(scores: list[RougeScore]) -> RougeScore:
    arr = np.array([[s.precision, s.recall, s.f1] for s in scores])
    p, r, f = arr.mean(axis=0)
    return RougeScore(float(p), float(r), float(f))


def corpus_rouge(pairs: Sequence[tuple], word_limit: int | None = 300) -> CorpusRouge:
    """Macro-averaged ROUGE over ``(generated, reference)`` summary pairs.

    Averaging is per component, so the corpus F1 is the mean of per-pair F1
    values rather than the harmonic mean of the averaged P and R.
    """
    if not pairs:
        raise DataError("no summary pairs to score")
    r1, r2, rl = [], [], []
    for gen, ref in pairs:
        g, r = flatten(gen, word_limit), flatten(ref, word_limit)
        r1.append(rouge_n(g, r, 1))
        r2.append(rouge_n(g, r, 2))
        rl.append(rouge_l(g, r))
    return CorpusRouge(_mean_score(r1), _mean_score(r2), _mean_score(rl), len(pairs), word_limit)


@dataclass(frozen=True)
class SummaryStats:
    mean_generated_words: float
    median_generated_words: float
    mean_reference_words: float
    median_reference_words: float
    median_generated_threads: float
    median_reference_threads: float
    median_thread_diff: float
    thread_diff_coverage: dict  # k -> % of examples with |generated - reference| <= k
    word_limit: int | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thread_diff_coverage"] = {str(k): v for k, v in self.thread_diff_coverage.items()}
        return d


def thread_diff_coverage(generated_counts: Sequence[int], reference_counts: Sequence[int], ks=(1, 2, 3)) -> dict:
    if len(generated_counts) != len(reference_counts):
        raise DataError(f"{len(generated_counts)} generated vs {len(reference_counts)} reference counts")
    if not generated_counts:
        raise DataError("no examples")
    diff = np.abs(np.asarray(generated_counts) - np.asarray(reference_counts))
    return {k: 100.0 * float(np.mean(diff <= k)) for k in ks}


def summary_stats(generated: Sequence[Sequence[str]], reference: Sequence[Sequence[str]], word_limit: int | None = 300) -> SummaryStats:
    """Length and thread-count statistics; a summary's thread count is its
    number of sentences."""
    if len(generated) != len(reference):
        raise DataError(f"{len(generated)} generated summaries vs {len(reference)} references")
    if not generated:
        raise DataError("no summaries")
    gen_words = [len(flatten(s, word_limit)) for s in generated]
    ref_words = [len(flatten(s, word_limit)) for s in reference]
    gen_threads = [len(s) for s in generated]
    ref_threads = [len(s) for s in reference]
    diff = np.abs(np.subtract(gen_threads, ref_threads))
    return SummaryStats(
        mean_generated_words=float(np.mean(gen_words)),
        median_generated_words=float(np.median(gen_words)),
        mean_reference_words=float(np.mean(ref_words)),
        median_reference_words=float(np.median(ref_words)),
        median_generated_threads=float(np.median(gen_threads)),
        median_reference_threads=float(np.median(ref_threads)),
        median_thread_diff=float(np.median(diff)),
        thread_diff_coverage=thread_diff_coverage(gen_threads, ref_threads),
        word_limit=word_limit,
    )


def evaluate_summaries(generated, reference, word_limit: int | None = 300) -> dict:
    """The metrics report: ``{rouge1, rouge2, rougeL, stats}``."""
    if len(generated) != len(reference):
        raise DataError(f"{len(generated)} generated summaries vs {len(reference)} references")
    scores = corpus_rouge(list(zip(generated, reference)), word_limit)
    report = scores.to_dict()
    report["stats"] = summary_stats(generated, reference, word_limit).to_dict()
    report["n"] = scores.n_pairs
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def format_table(report: dict) -> str:
    lines = [f"{'metric':<8} {'P':>8} {'R':>8} {'F1':>8}"]
    for key, label in (("rouge1", "ROUGE-1"), ("rouge2", "ROUGE-2"), ("rougeL", "ROUGE-L")):
        s = report[key]
        lines.append(f"{label:<8} {100 * s['p']:8.2f} {100 * s['r']:8.2f} {100 * s['f1']:8.2f}")
    stats = report.get("stats")
    if stats:
        cov = stats["thread_diff_coverage"]
        lines.append("")
        lines.append(f"median threads  generated {stats['median_generated_threads']:g}  reference {stats['median_reference_threads']:g}")
        lines.append(f"mean words      generated {stats['mean_generated_words']:.1f}  reference {stats['mean_reference_words']:.1f}")
        lines.append("|thread diff| <= " + "  ".join(f"{k}: {v:.1f}%" for k, v in cov.items()))
    return "\n".join(lines) + "\n"
