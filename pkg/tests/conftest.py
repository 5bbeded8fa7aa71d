import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from unriddle.kgraph import Assertion, KnowledgeStore  # noqa: E402
from unriddle.synthetic import SuiteSpec, generate, toy_kb  # noqa: E402

TOY_DIR = Path(__file__).parents[1] / "src" / "unriddle" / "data" / "toy"


@pytest.fixture(scope="session")
def toy():
    return toy_kb()


@pytest.fixture(scope="session")
def toy_store():
    return KnowledgeStore.from_dir(TOY_DIR)


@pytest.fixture(scope="session")
def suite():
    kb = generate(SuiteSpec())
    return kb, kb.store()


def tiny_store(vectors, assertions=(), concreteness=None, w2v=None, centrality=None):
    """Store whose tokens are the keys of ``vectors`` (cn space)."""
    tokens = list(vectors)
    cn = np.array([vectors[t] for t in tokens], dtype=float)
    w = cn if w2v is None else np.array([w2v[t] for t in tokens], dtype=float)
    return KnowledgeStore(tokens, cn, w, [Assertion(*a) for a in assertions], concreteness,
                          centrality)
