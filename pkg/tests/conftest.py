import os
from pathlib import Path

import pytest

_RESULTS: list[str] = []


def mnist_dir() -> Path | None:
    candidates = [os.environ.get("SPARSENET_DATA_DIR"), Path.cwd() / "data" / "mnist", Path.home() / "data" / "mnist"]
    for c in candidates:
        if c and (Path(c) / "t10k-labels-idx1-ubyte").exists():
            return Path(c)
    return None


@pytest.fixture(scope="session")
def mnist_path():
    path = mnist_dir()
    if path is None:
        pytest.skip("MNIST IDX files not found; set SPARSENET_DATA_DIR")
    return path


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(label: str, ok: bool, detail: str = ""):
        _RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
