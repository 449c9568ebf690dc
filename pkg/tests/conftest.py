import time

import numpy as np
import pytest


def unit_rows(rng, n, dim):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_corpus(rng, num_docs, min_tok, max_tok, dim):
    return [unit_rows(rng, int(rng.integers(min_tok, max_tok + 1)), dim) for _ in range(num_docs)]


def basis(dim, ids):
    """Rows of the identity matrix picked by ``ids``."""
    return np.eye(dim)[list(ids)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion

SUITE_BUDGET_S = 120
_acceptance = []
_started = []


def pytest_sessionstart(session):
    _started.append(time.perf_counter())


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))
    elif report.when == "setup" and report.outcome != "passed" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
    elapsed = time.perf_counter() - _started[0]
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(f"{verdict}  suite wall-clock {elapsed:.1f} s (budget {SUITE_BUDGET_S} s)")


# Two capital-city sentences and a question about one of them. Every distinct token
# string gets its own basis vector, so similarity is exact keyword match.
PB_DOCS = [
    ["[CLS]", "Paris", "ist", "die", "Hauptstadt", "von", "Frankreich", ".", "[SEP]"],
    ["[CLS]", "Berlin", "ist", "die", "Hauptstadt", "von", "Deutschland", ".", "[SEP]"],
]
PB_QUERY = ["[CLS]", "Was", "ist", "die", "Hauptstadt", "von", "Frankreich", "?", "[SEP]"]


def paris_berlin(dim=16):
    vocab = {}
    for tok in PB_DOCS[0] + PB_DOCS[1] + PB_QUERY:
        vocab.setdefault(tok, len(vocab))
    docs = [basis(dim, [vocab[t] for t in doc]) for doc in PB_DOCS]
    return docs, basis(dim, [vocab[t] for t in PB_QUERY])
