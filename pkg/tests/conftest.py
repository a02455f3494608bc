import numpy as np
import pytest

from weighted_bp.code_graph import ParityCheckCode, compile_trellis, construct_bch, derive_generator


def hamming_columns(r):
    """Parity-check matrix whose columns are the binary expansions of 1..2^r-1."""
    n = 2**r - 1
    return np.array([[(j >> b) & 1 for j in range(1, n + 1)] for b in range(r)], dtype=np.uint8)


@pytest.fixture(scope="session")
def hamming74():
    return derive_generator(ParityCheckCode(hamming_columns(3)))


@pytest.fixture(scope="session")
def bch15():
    return construct_bch(4, 1)


@pytest.fixture(scope="session")
def bch63():
    return construct_bch(6, 3)


@pytest.fixture(scope="session")
def layout15(bch15):
    return compile_trellis(bch15, 5)


@pytest.fixture(scope="session")
def layout63(bch63):
    return compile_trellis(bch63, 5)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = module.summary_lines() if module is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
