import time
from contextlib import contextmanager

import numpy as np
import pytest

from maskbench.raster import Raster

# (number, title, status, seconds, detail) for each acceptance criterion that ran
ACCEPTANCE_RESULTS = []


@contextmanager
def criterion(number, title, budget_s):
    """Time a block, record PASS/FAIL for the summary, and enforce the runtime budget."""
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        ACCEPTANCE_RESULTS.append((number, title, "FAIL", time.perf_counter() - t0, f"{type(exc).__name__}: {exc}"))
        print(f"AC{number} FAIL  {title}")
        raise
    elapsed = time.perf_counter() - t0
    if elapsed >= budget_s:
        ACCEPTANCE_RESULTS.append((number, title, "FAIL", elapsed, f"runtime {elapsed:.2f}s >= {budget_s}s"))
        print(f"AC{number} FAIL  {title} ({elapsed:.2f}s, budget {budget_s}s)")
        pytest.fail(f"AC{number} exceeded runtime budget: {elapsed:.2f}s >= {budget_s}s")
    ACCEPTANCE_RESULTS.append((number, title, "PASS", elapsed, f"budget {budget_s}s"))
    print(f"AC{number} PASS  {title} ({elapsed:.2f}s, budget {budget_s}s)")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, secs, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"AC{number} {status}  {title}  [{secs:.2f}s; {detail}]")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_raster(rng, w, h, c):
    return Raster.from_array(rng.integers(0, 256, size=(h, w, c), dtype=np.uint8))


@pytest.fixture
def face_rgb(rng):
    return random_raster(rng, 256, 256, 3)


@pytest.fixture
def face_gray(rng):
    return random_raster(rng, 256, 256, 1)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small on-disk synthetic corpus: 8 subjects x 3 frames, both spectra, both mask states."""
    from maskbench.synthetic import write_corpus

    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, n_subjects=8, images_per_subject=3, seed=1)
    return root
