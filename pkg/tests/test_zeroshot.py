import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sggadjust.dataset import SynthConfig, Vocabulary, ZeroShotManifest, generate_synthetic, object_clusters, split_train_test
from sggadjust.errors import ConfigurationError, CoverageError, DomainError, FormatError, ShapeError
from sggadjust.zeroshot import (
    EmbeddingStore, InferredPair, SimilarityParams, infer_zero_shot_pairs, load_word_vectors,
    optimize_pair_distribution, similarity, similarity_matrix, synthetic_word_vectors, write_word_vectors,
    zero_shot_pair_recall,
)

vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


def _store(mapping):
    return EmbeddingStore(len(next(iter(mapping.values()))), {k: np.asarray(v, float) for k, v in mapping.items()})


def test_identical_vectors_score_one_for_any_alpha():
    v = np.array([0.3, -1.7, 2.2])
    for alpha in (0.0, 0.3, 0.7, 1.0):
        assert similarity(v, v.copy(), alpha) == 1.0


def test_alpha_one_is_cosine():
    u, v = np.array([1.0, 2.0, 0.5]), np.array([-0.5, 1.0, 3.0])
    cos = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
    assert abs(similarity(u, v, 1.0) - cos) <= 1e-12


def test_orthogonal_unit_vectors_closed_form():
    assert abs(similarity([1.0, 0.0], [0.0, 1.0], 0.7) - 0.3 / (1 + math.sqrt(2))) <= 1e-12
    assert similarity([1.0, 0.0], [0.0, 1.0], 0.7) == pytest.approx(0.124264, abs=1e-6)


def test_similarity_errors():
    with pytest.raises(DomainError):
        similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ShapeError):
        similarity([1.0, 0.0], [1.0, 0.0, 0.0])


@settings(max_examples=80, deadline=None)
@given(vec, vec, st.floats(0, 1))
def test_similarity_symmetric_and_bounded(u, v, alpha):
    s = similarity(u, v, alpha)
    assert s == similarity(v, u, alpha)
    assert s <= 1.0
    if not np.array_equal(u, v):
        d = np.linalg.norm(np.subtract(u, v))
        assert 0 < 1 - d / (1 + d) <= 1


def test_similarity_params_validation():
    for kw in ({"alpha": -0.1}, {"alpha": 1.5}, {"beta": -0.2}):
        with pytest.raises(ConfigurationError):
            SimilarityParams(**kw)


def test_load_full_coverage(tmp_path):
    vocab = Vocabulary(("girl", "boy", "chair"), ("on",))
    rng = np.random.default_rng(0)
    lines = [f"{w} " + " ".join(str(x) for x in rng.standard_normal(50)) for w in ("girl", "boy", "chair", "xyz")]
    (tmp_path / "v.txt").write_text("\n".join(lines) + "\n")
    store = load_word_vectors(tmp_path / "v.txt", vocab)
    assert store.dim == 50
    assert set(store.vectors) == {"girl", "boy", "chair"}


def test_missing_token_is_coverage_error(tmp_path):
    vocab = Vocabulary(("girl", "chair"), ("on",))
    (tmp_path / "v.txt").write_text("girl 1 2 3\n")
    with pytest.raises(CoverageError, match="chair"):
        load_word_vectors(tmp_path / "v.txt", vocab)


def test_ragged_rows_are_format_error(tmp_path):
    (tmp_path / "v.txt").write_text("a 1 2 3\nb 1 2\n")
    with pytest.raises(FormatError):
        load_word_vectors(tmp_path / "v.txt")


def test_write_then_load_is_bit_exact(tmp_path):
    vocab = Vocabulary(tuple(f"o{i}" for i in range(6)), ("r",))
    store = synthetic_word_vectors(vocab, seed=2)
    write_word_vectors(store, tmp_path / "v.txt")
    back = load_word_vectors(tmp_path / "v.txt", vocab)
    for name, v in store.vectors.items():
        assert back[name].tobytes() == v.tobytes()


def test_synthetic_vectors_cluster(tmp_path):
    vocab = Vocabulary(tuple(f"o{i}" for i in range(20)), ("r",))
    write_word_vectors(synthetic_word_vectors(vocab), tmp_path / "v.txt")
    store = load_word_vectors(tmp_path / "v.txt", vocab)
    clusters = object_clusters(20, 4)
    m = store.matrix(vocab.object_names)
    unit = m / np.linalg.norm(m, axis=1, keepdims=True)
    cos = unit @ unit.T
    within = [cos[i, j] for i in range(20) for j in range(20) if i != j and clusters[i] == clusters[j]]
    across = [cos[i, j] for i in range(20) for j in range(20) if clusters[i] != clusters[j]]
    assert min(within) > max(across)


def test_rule1_substitutes_first_slot():
    names = ("girl", "boy", "chair")
    store = _store({"girl": [1.0, 0.0, 0.1], "boy": [1.0, 0.05, 0.1], "chair": [0.0, 1.0, 0.0]})
    out = infer_zero_shot_pairs({(0, 2)}, store, SimilarityParams(0.7, 0.8), names)
    assert [(p.pair, p.rule, p.source_pair) for p in out] == [((1, 2), "Rule1", (0, 2))]


def test_rule2_substitutes_second_slot():
    names = ("girl", "apple", "pear")
    store = _store({"girl": [0.0, 1.0, 0.0], "apple": [1.0, 0.0, 0.2], "pear": [1.0, 0.0, 0.25]})
    out = infer_zero_shot_pairs({(0, 1)}, store, SimilarityParams(0.7, 0.8), names)
    assert [(p.pair, p.rule) for p in out] == [((0, 2), "Rule2")]


def test_observed_pairs_excluded_and_best_source_kept():
    names = ("a", "b", "c")
    store = _store({"a": [1.0, 0.0], "b": [1.0, 0.1], "c": [1.0, 0.3]})
    out = infer_zero_shot_pairs({(0, 2), (1, 2)}, store, SimilarityParams(0.7, 0.0), names)
    pairs = {p.pair: p for p in out}
    assert (0, 2) not in pairs and (1, 2) not in pairs
    sim = similarity_matrix(store, names)
    for p in out:
        assert p.similarity >= 0.0
    # (2, 2) reachable from (0, 2) and (1, 2) by Rule1, and from either by Rule2; the max wins
    assert pairs[(2, 2)].similarity == max(sim[0, 2], sim[1, 2])


def test_beta_one_with_distinct_vectors_is_empty():
    vocab = Vocabulary(tuple(f"o{i}" for i in range(10)), ("r",))
    store = synthetic_word_vectors(vocab)
    every_pair = {(i, j) for i in range(10) for j in range(10) if (i + j) % 3}
    assert infer_zero_shot_pairs(every_pair, store, SimilarityParams(0.7, 1.0), vocab.object_names) == []


def test_raising_beta_never_adds_pairs():
    ds = generate_synthetic(SynthConfig(seed=3))
    train, _, manifest = split_train_test(ds, 0.2, 3)
    store = synthetic_word_vectors(ds.vocabulary, seed=3)
    prev = None
    for beta in np.round(np.arange(0.1, 1.01, 0.1), 1):
        cur = {p.pair for p in infer_zero_shot_pairs(train.pair_types(), store, SimilarityParams(0.7, beta),
                                                      ds.vocabulary.object_names)}
        if prev is not None:
            assert cur <= prev
        prev = cur
    assert prev == set()


def test_optimize_examples():
    P = np.zeros((3, 3))
    P[0, 1] = 1.0
    np.testing.assert_array_equal(optimize_pair_distribution(P, []), P)
    out = optimize_pair_distribution(P, [InferredPair(2, 1, (0, 1), "Rule1", 0.5)])
    assert out[0, 1] == pytest.approx(2 / 3, abs=1e-15)
    assert out[2, 1] == pytest.approx(1 / 3, abs=1e-15)
    assert out.sum() == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 8))
def test_optimize_preserves_normalization_and_support(seed, n_inferred):
    rng = np.random.default_rng(seed)
    P = rng.random((4, 4)) * (rng.random((4, 4)) < 0.6)
    P[0, 0] += 0.1
    P /= P.sum()
    inferred = [
        InferredPair(int(rng.integers(4)), int(rng.integers(4)), (int(rng.integers(4)), int(rng.integers(4))),
                     "Rule1", float(rng.random()))
        for _ in range(n_inferred)
    ]
    out = optimize_pair_distribution(P, inferred)
    assert abs(out.sum() - 1.0) <= 1e-12
    assert (out >= 0).all()
    assert (out[P > 0] > 0).all()


def test_optimize_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        optimize_pair_distribution(np.ones((2, 3)) / 6, [])
    with pytest.raises(ShapeError):
        optimize_pair_distribution(np.ones((2, 2)) / 4, [InferredPair(5, 0, (0, 0), "Rule1", 0.5)])


def test_pair_recall_examples():
    m = ZeroShotManifest(frozenset(), frozenset({(0, 1), (2, 2)}))
    full = [InferredPair(0, 1, (1, 1), "Rule1", 0.9), InferredPair(2, 2, (1, 2), "Rule1", 0.8)]
    assert zero_shot_pair_recall(full, m) == 1.0
    assert zero_shot_pair_recall(full[:1], m) == 0.5
    assert zero_shot_pair_recall([], ZeroShotManifest(frozenset(), frozenset())) == 1.0


def test_pair_recall_matches_set_oracle():
    ds = generate_synthetic(SynthConfig(seed=6))
    train, _, manifest = split_train_test(ds, 0.2, 6)
    store = synthetic_word_vectors(ds.vocabulary, seed=6)
    out = infer_zero_shot_pairs(train.pair_types(), store, SimilarityParams(), ds.vocabulary.object_names)
    found = {p.pair for p in out}
    want = len(found & manifest.zero_shot_pairs) / len(manifest.zero_shot_pairs)
    assert zero_shot_pair_recall(out, manifest) == want


def test_inferred_pair_json_round_trip():
    p = InferredPair(3, 1, (0, 1), "Rule2", 0.625)
    assert InferredPair.from_json(p.to_json()) == p
