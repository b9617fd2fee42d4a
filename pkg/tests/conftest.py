import os
from pathlib import Path

import pytest

from bordernet.data import DATA_DIR_ENV, load_mnist

ROOT = Path(__file__).resolve().parents[1]


def mnist_dir():
    for d in (os.environ.get(DATA_DIR_ENV), ROOT / "data" / "mnist"):
        if d and (Path(d) / "t10k-labels-idx1-ubyte").exists() or d and (Path(d) / "t10k-labels-idx1-ubyte.gz").exists():
            return Path(d)
    return None


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip(f"MNIST IDX files not found; set {DATA_DIR_ENV}")
    return d


@pytest.fixture(scope="session")
def mnist_test(mnist_path):
    return load_mnist("test", mnist_path)


@pytest.fixture(scope="session")
def mnist_train(mnist_path):
    return load_mnist("train", mnist_path)


# --------------------------------------------------------------------------
# acceptance report: one line per criterion at the end of the run
# --------------------------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Call ``criterion(n, ok, detail)`` to record the outcome of acceptance criterion ``n``."""

    def record(number, ok, detail=""):
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
