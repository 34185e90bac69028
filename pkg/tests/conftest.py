import numpy as np
import pytest

from wordscores.corpus import Corpus, Document, TermDocumentMatrix, build_matrix
from wordscores.scaling import ReferenceSet

# Shared micro-corpus used across the suite:
#   r1 = [tax, tax, spend]           assigned -1
#   r2 = [tax, spend, spend, spend]  assigned +1
#   v  = [tax, spend]
TOY_R1 = ("tax", "tax", "spend")
TOY_R2 = ("tax", "spend", "spend", "spend")
TOY_V = ("tax", "spend")
TOY_SCORES = {"r1": {"d": -1.0}, "r2": {"d": 1.0}}


def corpus_from_tokens(role, docs, country="xx", year=2004):
    """Build a tokenized Corpus from {doc_id: token sequence}."""
    documents = tuple(
        Document(id=doc_id, label=doc_id.upper(), country=country, year=year,
                 tokens=tuple(tokens))
        for doc_id, tokens in docs.items()
    )
    return Corpus(documents, role)


def matrix_from_tokens(role, docs, **kwargs) -> TermDocumentMatrix:
    return build_matrix(corpus_from_tokens(role, docs, **kwargs))


@pytest.fixture
def toy_reference_matrix():
    return matrix_from_tokens("reference", {"r1": TOY_R1, "r2": TOY_R2})


@pytest.fixture
def toy_reference(toy_reference_matrix):
    return ReferenceSet(toy_reference_matrix, dict(TOY_SCORES))


@pytest.fixture
def toy_virgin_matrix():
    return matrix_from_tokens("virgin", {"v": TOY_V}, year=2009)


def random_reference(rng, n_docs, vocab, doc_len=(8, 20)):
    """Random tokenized reference docs plus distinct assigned scores."""
    docs = {}
    for i in range(n_docs):
        length = int(rng.integers(doc_len[0], doc_len[1] + 1))
        docs[f"r{i}"] = tuple(rng.choice(vocab, size=length))
    scores = {}
    values = np.round(rng.uniform(-10, 10, size=n_docs), 3)
    while np.unique(values).size < 2:
        values = np.round(rng.uniform(-10, 10, size=n_docs), 3)
    for i in range(n_docs):
        scores[f"r{i}"] = {"d": float(values[i])}
    return docs, scores


def random_virgin(rng, n_docs, vocab, oov_vocab=(), oov_share=0.0, doc_len=(8, 20), equal_len=None):
    """Random virgin docs drawing oov_share of tokens from oov_vocab."""
    docs = {}
    for i in range(n_docs):
        length = equal_len or int(rng.integers(doc_len[0], doc_len[1] + 1))
        n_oov = int(round(length * oov_share))
        tokens = list(rng.choice(vocab, size=length - n_oov))
        if n_oov:
            tokens += list(rng.choice(oov_vocab, size=n_oov))
            rng.shuffle(tokens)
        docs[f"v{i}"] = tuple(tokens)
    return docs


def shrinkage_case(rng, n_ref=3, n_virgin=4, n_content=6, n_block=4, virgin_len=12):
    """Reference set plus equal-length virgin docs and a common-word block.

    Every reference document contains each block word exactly once and has
    the same total length, so block words have equal relative frequency
    everywhere and their word score is the mean assigned score.
    """
    content = [f"c{i}" for i in range(n_content)]
    block = [f"b{i}" for i in range(n_block)]
    ref_len = 3 * n_content  # content slots per reference doc
    ref_docs = {}
    for i in range(n_ref):
        body = list(rng.choice(content, size=ref_len))
        ref_docs[f"r{i}"] = tuple(body + block)
    values = rng.uniform(-5, 5, size=n_ref)
    while np.unique(values).size < 2:
        values = rng.uniform(-5, 5, size=n_ref)
    scores = {f"r{i}": {"d": float(values[i])} for i in range(n_ref)}
    virgin_docs = random_virgin(rng, n_virgin, content + block, equal_len=virgin_len)
    reference = ReferenceSet(matrix_from_tokens("reference", ref_docs), scores)
    return reference, virgin_docs, block


def append_block(virgin_docs, block, k):
    """Append k copies of the block to every virgin document."""
    return {doc: tuple(tokens) + tuple(block) * k for doc, tokens in virgin_docs.items()}
