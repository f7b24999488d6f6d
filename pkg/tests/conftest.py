from collections import Counter

import pytest

from hier2hier.corpusforge import SourceDocument


def assert_example_invariants(example, docs_by_id, cfg):
    """Independent check of every structural property of a generated example."""
    assert len(example.posts) == len(example.thread_ids)
    counts = Counter(example.thread_ids)
    assert cfg.a <= len(counts) <= cfg.b
    assert sorted(counts) == list(range(len(example.source_ids)))
    assert len(set(example.source_ids)) == len(example.source_ids)
    for k, q in counts.items():
        doc = docs_by_id[example.source_ids[k]]
        assert cfg.m <= q <= min(cfg.n, len(doc.sentences))
        emitted = [p for p, t in zip(example.posts, example.thread_ids) if t == k]
        assert emitted == list(doc.sentences[:q])
    assert len(example.posts) == sum(counts.values())
    order = []
    for t in example.thread_ids:
        if t not in order:
            order.append(t)
    assert example.summary == [docs_by_id[example.source_ids[k]].summary for k in order]
    assert len(example.summary) == len(set(example.summary))


@pytest.fixture
def six_docs():
    return [
        SourceDocument(f"d{i}", f"title number {i} .", tuple(f"doc {i} sentence {j} ." for j in range(2 + i % 4)))
        for i in range(6)
    ]


# acceptance criteria record "PASS"/"FAIL" lines here; they are printed at the end of the run
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
