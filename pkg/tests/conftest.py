import numpy as np
import pytest

from hitcm import numerics as nx
from hitcm.data import SyntheticSpec, Vocabs, generate_synthetic, make_batches, vocabs_for
from hitcm.model import HitModel, HitModelConfig


@pytest.fixture(autouse=True, scope="session")
def _finite_checks():
    # forward ops assert finiteness in the test build
    nx.set_check_finite(True)
    yield
    nx.set_check_finite(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model(head="classifier", d=8, n_heads=2, seed=0, examples=None, **kw):
    """A small model plus vocabs and examples for ``head``."""
    kind = {"classifier": "classification", "tagger": "tagging", "seq2seq": "copy"}[head]
    if examples is None:
        examples, _ = generate_synthetic(SyntheticSpec(kind, 20, 4, max_len=5, vocab_size=12), seed=3)
    voc = vocabs_for(examples)
    cfg = HitModelConfig(len(voc.chars), len(voc.words), head, n_labels=max(len(voc.labels), 1),
                         target_vocab_size=len(voc.target) if voc.target else 0, d_model=d,
                         n_heads=n_heads, l_c=1, l_w=1, dropout=0.0, **kw)
    return HitModel(cfg, seed=seed), voc, examples


def batch_of(examples, voc: Vocabs, size=None, tfidf=None):
    return make_batches(examples, voc, size or len(examples), None, tfidf=tfidf)[0]
