import sys

import numpy as np
import pytest

from impalloc.evaluation import bundled_corpus
from impalloc.image import load_image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus_paths():
    return bundled_corpus()


@pytest.fixture(scope="session")
def corpus_images(corpus_paths):
    return {p.stem: load_image(p) for p in corpus_paths}


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus_sweep(corpus_paths):
    """Default-settings sweep of the bundled corpus, shared by evaluation and acceptance tests."""
    import os
    import time

    from impalloc.evaluation import sweep
    from impalloc.pipeline import Settings

    start = time.perf_counter()
    records = sweep(corpus_paths, Settings(), jobs=min(8, os.cpu_count() or 1))
    return records, time.perf_counter() - start
