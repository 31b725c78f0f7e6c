import numpy as np
import pytest

from spikeslab.data import Dataset

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_dataset(rng, n, p, binary=False):
    X = rng.standard_normal((n, p))
    if binary:
        y = (rng.random(n) < 0.5).astype(float)
        return Dataset(X, y, "binary")
    return Dataset(X, rng.standard_normal(n))
