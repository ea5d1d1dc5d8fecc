import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__)), "src"))

from embeddings.embedding_store import (  # noqa: E402
    BinaryEmbedding,
    DocActivations,
    build_index,
)
from encoding.sae_encoder import SaeWeights, TokenActivationRecord  # noqa: E402
from gateway.annotator_gateway import AnnotatorGateway  # noqa: E402
from gateway.providers import MockProvider  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def identity_weights():
    """d_model = d_sae = 3, identity encoder and decoder, zero biases."""
    eye = np.eye(3, dtype=np.float32)
    return SaeWeights(eye, np.zeros(3), eye, np.zeros(3))


@pytest.fixture
def random_weights(rng):
    def _make(d_model=8, d_sae=32, activation_kind="relu", k=None):
        return SaeWeights(
            rng.normal(size=(d_sae, d_model)),
            rng.normal(scale=0.1, size=d_sae),
            rng.normal(size=(d_model, d_sae)),
            rng.normal(scale=0.1, size=d_model),
            activation_kind=activation_kind,
            k=k,
        )

    return _make


def make_doc(doc_id, tokens):
    """tokens: list of [(latent_id, value), ...] per token position."""
    return DocActivations(
        doc_id,
        tuple(TokenActivationRecord.from_pairs(n, pairs) for n, pairs in enumerate(tokens)),
    )


@pytest.fixture
def doc_factory():
    return make_doc


@pytest.fixture
def index_factory():
    """Builds an inverted index from {doc_id: [latent ids]}; doc order is kept."""

    def _make(active_sets, prefix=None):
        if isinstance(active_sets, dict):
            items = list(active_sets.items())
        else:
            items = [(f"{prefix or 'd'}{n}", ids) for n, ids in enumerate(active_sets)]
        return build_index(
            [BinaryEmbedding(doc_id, np.array(ids, dtype=np.int64)) for doc_id, ids in items]
        )

    return _make


@pytest.fixture
def random_docs(rng):
    """Token-level documents with values that survive a float32 round trip."""

    def _make(n_docs=20, d_sae=50, max_tokens=6, max_active=5, prefix="doc"):
        docs = []
        for n in range(n_docs):
            tokens = []
            for _ in range(int(rng.integers(1, max_tokens + 1))):
                k = int(rng.integers(0, max_active + 1))
                ids = np.sort(rng.choice(d_sae, size=k, replace=False))
                vals = rng.uniform(0.05, 2.0, size=k).astype(np.float32).astype(np.float64)
                tokens.append(list(zip(ids.tolist(), vals.tolist())))
            docs.append(make_doc(f"{prefix}-{n:03d}", tokens))
        return docs

    return _make


@pytest.fixture
def mock_gateway():
    return AnnotatorGateway(MockProvider(embed_dim=16), max_in_flight=4)


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Isolated workspace directory with inputs/ and outputs/."""
    (tmp_path / "inputs").mkdir()
    (tmp_path / "outputs").mkdir()
    monkeypatch.chdir(tmp_path)
    return tmp_path
