import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from n400surprisal.lm.network import LstmParams

ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def random_params(rng, vocab_size, embedding_size, hidden_sizes, scale=0.5) -> LstmParams:
    w_x, w_h, bias = [], [], []
    in_dim = embedding_size
    for hidden in hidden_sizes:
        w_x.append(rng.normal(0, scale, size=(4 * hidden, in_dim)))
        w_h.append(rng.normal(0, scale, size=(4 * hidden, hidden)))
        bias.append(rng.normal(0, scale, size=4 * hidden))
        in_dim = hidden
    return LstmParams(
        embedding=rng.normal(0, scale, size=(vocab_size, embedding_size)),
        w_x=tuple(w_x),
        w_h=tuple(w_h),
        bias=tuple(bias),
        w_out=rng.normal(0, scale, size=(vocab_size, in_dim)),
        b_out=rng.normal(0, scale, size=vocab_size),
    )


def zero_params(vocab_size, embedding_size, hidden_sizes) -> LstmParams:
    w_x, w_h, bias = [], [], []
    in_dim = embedding_size
    for hidden in hidden_sizes:
        w_x.append(np.zeros((4 * hidden, in_dim)))
        w_h.append(np.zeros((4 * hidden, hidden)))
        bias.append(np.zeros(4 * hidden))
        in_dim = hidden
    return LstmParams(
        embedding=np.zeros((vocab_size, embedding_size)),
        w_x=tuple(w_x),
        w_h=tuple(w_h),
        bias=tuple(bias),
        w_out=np.zeros((vocab_size, in_dim)),
        b_out=np.zeros(vocab_size),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, printed after the run."""
    reports = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if getattr(rep, "when", "call") == "call" and "test_acceptance" in rep.nodeid:
                reports.append((rep.nodeid.split("::")[-1], status.upper()))
    if reports:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(reports):
            terminalreporter.write_line(f"[ACCEPTANCE] {name}: {status}")
