import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hysage.data import InteractionMatrix
from hysage.similarity import (SimilarityMeasure, build_item_similarity, build_user_similarity,
                               neighbors)


def _Y(rows, n_items=None):
    users = [u for u, r in enumerate(rows) for _ in r]
    items = [i for r in rows for i in r]
    return InteractionMatrix.from_pairs(users, items, len(rows), n_items or max(items) + 1)


def test_user_overlap_examples():
    assert neighbors(build_user_similarity(_Y([[0, 1], [1, 2]])), 0) == [(1, 1.0)]
    assert build_user_similarity(_Y([[0], [1]])).n_edges == 0
    assert build_user_similarity(_Y([[0, 1, 2], [0, 1, 2]])).weight(0, 1) == 3


def test_item_examples():
    S = build_item_similarity(_Y([[0, 1], [1, 2]]))
    assert neighbors(S, 1) == [(0, 1.0), (2, 1.0)]
    assert S.weight(0, 2) == 0
    clique = build_item_similarity(_Y([[0, 1, 2]]))
    assert [neighbors(clique, k) for k in range(3)] == [[(1, 1.0), (2, 1.0)], [(0, 1.0), (2, 1.0)],
                                                        [(0, 1.0), (1, 1.0)]]


def test_unused_item_is_isolated():
    S = build_item_similarity(_Y([[0, 1]], n_items=3))
    assert S.isolated().tolist() == [2] and neighbors(S, 2) == []


def test_out_of_range_node():
    with pytest.raises(IndexError):
        neighbors(build_user_similarity(_Y([[0, 1], [1]])), 5)


def test_other_measures_are_hooks_only():
    with pytest.raises(NotImplementedError):
        build_user_similarity(_Y([[0, 1], [1]]), SimilarityMeasure.JACCARD)


def test_dense_oracle_on_random_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        N, M = rng.integers(1, 9, size=2)
        Yd = (rng.random((N, M)) < rng.uniform(0.1, 0.9)).astype(np.int64)
        if not Yd.any():
            Yd[0, 0] = 1
        u, i = np.nonzero(Yd)
        Y = InteractionMatrix.from_pairs(u, i, N, M)
        want_u = Yd @ Yd.T
        np.fill_diagonal(want_u, 0)
        want_i = Yd.T @ Yd
        np.fill_diagonal(want_i, 0)
        assert np.array_equal(build_user_similarity(Y).to_dense(), want_u)
        assert np.array_equal(build_item_similarity(Y).to_dense(), want_i)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetry_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    N, M = rng.integers(2, 9, size=2)
    Yd = rng.random((N, M)) < 0.5
    Yd[0, 0] = True
    u, i = np.nonzero(Yd)
    S = build_user_similarity(InteractionMatrix.from_pairs(u, i, N, M))
    for a in range(N):
        for b, w in neighbors(S, a):
            assert (a, w) in neighbors(S, b) and w >= 1
    perm = rng.permutation(M)
    S2 = build_user_similarity(InteractionMatrix.from_pairs(u, perm[i], N, M))
    assert np.array_equal(S.to_dense().sum(1), S2.to_dense().sum(1))


def test_edge_export(tmp_path):
    S = build_item_similarity(_Y([[0, 1], [1, 2]]))
    S.save_edges(tmp_path / "e.tsv")
    assert (tmp_path / "e.tsv").read_text().splitlines() == ["0\t1\t1", "1\t2\t1"]
