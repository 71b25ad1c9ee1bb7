import numpy as np
import pytest
from hypothesis import given, strategies as st

from semmap_bench.errors import SchemaError
from semmap_bench.labels import (ClassVocabulary, HashEmbeddingProvider, LabelMatcher, MatchMode,
                                 TableEmbeddingProvider, match_label, match_labels,
                                 normalize_label)

HOUSEHOLD = ClassVocabulary(("wall", "floor", "wall cabinet", "base_cabinet", "Sofa", "stairs"))


@pytest.mark.parametrize("raw, expected", [
    ("wall_cabinet", "wall cabinet"),
    ("Sofa", "sofa"),
    ("  Base--Cabinet ", "base cabinet"),
    ("tv\tstand", "tv stand"),
])
def test_normalize(raw, expected):
    assert normalize_label(raw) == expected


@given(st.text())
def test_normalize_idempotent(text):
    once = normalize_label(text)
    assert normalize_label(once) == once


def test_exact_match_after_normalization():
    assert match_label("wall_cabinet", HOUSEHOLD, LabelMatcher()) == 2
    assert match_label("Base Cabinet", HOUSEHOLD, LabelMatcher()) == 3


def test_exact_no_match():
    assert match_label("zebra", HOUSEHOLD, LabelMatcher()) is None


def test_exact_is_injective_on_vocabulary():
    for i, name in enumerate(HOUSEHOLD.names):
        assert match_label(name, HOUSEHOLD, LabelMatcher()) == i


def test_vocabulary_rejects_normalized_collision():
    with pytest.raises(SchemaError):
        ClassVocabulary(("wall_cabinet", "Wall Cabinet"))


def test_vocabulary_file(tmp_path):
    path = tmp_path / "classes.txt"
    path.write_text("wall\nfloor\nwall_cabinet\n\n")
    vocab = ClassVocabulary.from_file(path)
    assert vocab.names == ("wall", "floor", "wall_cabinet")
    assert vocab.index["wall cabinet"] == 2


def _one_hot_matcher(vocab, pred_vectors, threshold=0.7):
    dim = len(vocab)
    table = {name: np.eye(dim)[i] for i, name in enumerate(vocab.normalized)}
    table.update(pred_vectors)
    return LabelMatcher(MatchMode.EMBEDDING, TableEmbeddingProvider(table), threshold)


def test_embedding_argmax_on_basis_vector():
    vocab = ClassVocabulary(("chair", "table", "lamp", "bed"))
    matcher = _one_hot_matcher(vocab, {"reading light": np.eye(4)[2]})
    assert match_label("reading_light", vocab, matcher) == 2


def test_embedding_below_threshold():
    vocab = ClassVocabulary(("chair", "table"))
    v = np.array([1.0, 1.0])  # cosine 0.707 with both
    matcher = _one_hot_matcher(vocab, {"stool": v}, threshold=0.75)
    assert match_label("stool", vocab, matcher) is None


def test_embedding_tie_goes_to_lowest_index():
    vocab = ClassVocabulary(("chair", "table"))
    matcher = _one_hot_matcher(vocab, {"stool": np.array([1.0, 1.0])}, threshold=0.5)
    assert match_label("stool", vocab, matcher) == 0


@given(st.lists(st.text(min_size=1, max_size=8), min_size=1, max_size=8, unique_by=normalize_label),
       st.text(max_size=8))
def test_threshold_one_matches_only_identical(names, query):
    names = [n for n in names if normalize_label(n)]
    if not names:
        return
    vocab = ClassVocabulary(tuple(names))
    matcher = LabelMatcher(MatchMode.EMBEDDING, HashEmbeddingProvider(32), 1.0)
    got = match_label(query, vocab, matcher)
    expected = vocab.index.get(normalize_label(query))
    assert got == expected


def test_provider_failure_propagates():
    vocab = ClassVocabulary(("chair",))
    matcher = LabelMatcher(MatchMode.EMBEDDING, TableEmbeddingProvider({"chair": [1.0]}))
    with pytest.raises(KeyError):
        match_label("unknown thing", vocab, matcher)


def test_batch_matches_scalar():
    vocab = ClassVocabulary(("chair", "table", "lamp"))
    matcher = LabelMatcher(MatchMode.EMBEDDING, HashEmbeddingProvider(16), 0.2)
    preds = ["Chair", "table", "floor lamp", "xyz"]
    assert match_labels(preds, vocab, matcher) == [match_label(p, vocab, matcher) for p in preds]
