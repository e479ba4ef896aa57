import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from semcert.certainty import Scorer  # noqa: E402
from semcert.gravity import generate_instance  # noqa: E402
from semcert.index import Index  # noqa: E402
from semcert.pq import PQCodebook, default_config, train_codebook  # noqa: E402

ACCEPTANCE_SEED = 0


@pytest.fixture
def toy_codebook():
    # D=4, m=2, each subspace holds centroids (0,0) and (1,1)
    return PQCodebook(np.array([[[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]]]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class DefaultWorld:
    def __init__(self, seed=ACCEPTANCE_SEED):
        self.instance = generate_instance(seed=seed)
        self.codebook = train_codebook(self.instance.corpus, default_config(self.instance.dim, seed))
        self.index = Index(self.instance.corpus)
        self.scorer = Scorer.calibrate(self.index, self.codebook, seed=seed)


@pytest.fixture(scope="session")
def default_world():
    return DefaultWorld()


def pytest_terminal_summary(terminalreporter):
    from verdicts import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        status, title, elapsed, detail = RESULTS[number]
        terminalreporter.write_line(f"[{status}] {number:>2}. {title} ({elapsed:.1f}s) {detail}")
