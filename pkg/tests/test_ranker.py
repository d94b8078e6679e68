import numpy as np
import pytest

from hysage.autograd import Tensor, gradient_check
from hysage.context import ContextFeatures, ContextSchema, FieldSpec
from hysage.data import FeatureTable, InteractionMatrix
from hysage.errors import ConfigError, DataError, ShapeError
from hysage.interest import InterestConfig
from hysage.ranker import (VARIANTS, RankingModel, TrainConfig, bce_loss, bce_with_logits, forward_score,
                           score_candidates, tower_widths, train_epoch, training_pairs)


def world(planted, d=4, depth=1, uf=None):
    pairs, users, items, uf0, itf = planted
    Y = InteractionMatrix.from_pairs(*zip(*pairs), len(users), len(items))
    schema = ContextSchema([FieldSpec("ub", uf0.kind, table=uf or uf0)], [FieldSpec("ib", itf.kind, table=itf)],
                           cross_depth=depth)
    ctx = ContextFeatures(schema, list(users), list(items))
    rng = np.random.default_rng(11)
    return Y, ctx, rng.normal(0, 0.5, (len(users), d)), rng.normal(0, 0.5, (len(items), d))


def micro(planted, variant="full", **kw):
    Y, ctx, U, V = world(planted)
    return RankingModel(U, V, Y, ctx, InterestConfig(K=2), variant=variant, seed=1, **kw)


def test_tower_widths():
    assert tower_widths(64) == [256, 128, 64, 32, 16, 8]
    assert tower_widths(16) == [64, 32, 16, 8]
    assert tower_widths(2) == [8]
    assert tower_widths(1) == [8]


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(negatives_per_positive=0)


def test_unknown_variant_and_bad_dims(planted):
    Y, ctx, U, V = world(planted)
    with pytest.raises(ConfigError):
        RankingModel(U, V, Y, ctx, variant="no_everything")
    with pytest.raises(ShapeError):
        RankingModel(U, V[:, :3], Y, ctx)


def test_zero_tower_scores_half(planted):
    m = micro(planted)
    for p in m.tower.parameters():
        p.data[...] = 0.0
    assert np.all(m.score_pairs([0, 3, 7], [1, 2, 9]) == 0.5)


def test_scores_strictly_inside_unit_interval(planted):
    m = micro(planted)
    rng = np.random.default_rng(0)
    users, items = rng.integers(0, m.n_users, 50), rng.integers(0, m.n_items, 50)
    for _ in range(1000 // 50):
        for p in m.parameters():
            p.data[...] = rng.normal(0, 1.0, p.shape)
        s = m.score_pairs(users, items)
        assert ((s > 0) & (s < 1)).all()


def test_deterministic_and_batch_independent(planted):
    m = micro(planted)
    users, items = np.array([0, 1, 2, 5]), np.array([3, 3, 4, 0])
    full = m.score_pairs(users, items)
    assert np.array_equal(full, micro(planted).score_pairs(users, items))
    one_by_one = [forward_score(m, u, i) for u, i in zip(users, items)]
    assert np.allclose(full, one_by_one, rtol=0, atol=1e-15)


def test_unknown_ids(planted):
    m = micro(planted)
    with pytest.raises(DataError):
        m.score_pairs([999], [0])
    with pytest.raises(DataError):
        m.score_pairs([0], [-1])


def test_bce_examples():
    assert float(bce_loss([0.5], [1]).data) == pytest.approx(np.log(2))
    assert float(bce_loss([0.5, 0.5], [1, 0]).data) == pytest.approx(2 * np.log(2))
    near = float(bce_loss([1 - 1e-12, 1e-12], [1, 0]).data)
    assert near < 1e-10
    with pytest.raises(ValueError):
        bce_loss([1.0], [1])
    with pytest.raises(ShapeError):
        bce_loss([0.5, 0.5], [1])


def test_bce_l2_term_and_logit_form():
    from hysage.autograd import Parameter
    p = Parameter(np.array([1.0, 2.0]))
    assert float(bce_loss([0.5], [1], l2=0.1, params=[p]).data) == pytest.approx(np.log(2) + 0.5)
    z = np.array([-3.0, 0.2, 4.0])
    s = 1 / (1 + np.exp(-z))
    assert float(bce_with_logits(Tensor(z), [1, 0, 1]).data) == pytest.approx(float(bce_loss(s, [1, 0, 1]).data))
    assert float(bce_with_logits(Tensor(np.array([800.0])), [0]).data) == pytest.approx(800.0)


def test_full_model_gradient_check(planted):
    m = micro(planted)
    rng = np.random.default_rng(5)
    for p in m.parameters():  # random values, biases included, keep ReLUs off their kinks
        p.data[...] = rng.normal(0, 0.5, p.shape)
    users, items = np.array([0, 4, 9, 13]), np.array([2, 7, 1, 20])
    labels = np.array([1, 0, 1, 0])
    loss = lambda: bce_with_logits(m.forward(users, items, seed=3), labels, 1e-3, m.parameters())  # noqa: E731
    assert gradient_check(loss, m.parameters()) < 1e-3


def test_training_pairs_skip_single_item_users():
    Y = InteractionMatrix.from_pairs([0, 1, 1], [0, 0, 1], 2, 2)
    u, i = training_pairs(Y)
    assert u.tolist() == [1, 1] and i.tolist() == [0, 1]


def test_epoch_ratio_and_frozen_embeddings(planted):
    m = micro(planted)
    before = (m.user_vectors.tobytes(), m.item_vectors.tobytes())
    stats = train_epoch(m, TrainConfig(batch_size=64), np.random.default_rng(0))
    assert stats.n_neg == 4 * stats.n_pos
    assert (m.user_vectors.tobytes(), m.item_vectors.tobytes()) == before
    assert not m.user_vectors.flags.writeable


def test_training_loss_decreases(planted):
    m = micro(planted)
    rng = np.random.default_rng(0)
    cfg = TrainConfig(batch_size=64)
    losses = [train_epoch(m, cfg, rng, e).mean_loss for e in range(10)]
    smooth = np.convolve(losses, np.ones(3) / 3, mode="valid")
    assert (np.diff(smooth) < 0).all()
    assert losses[-1] < 0.8 * losses[0]


def test_training_is_seeded(planted):
    a, b = micro(planted), micro(planted)
    for m in (a, b):
        train_epoch(m, TrainConfig(batch_size=64), np.random.default_rng(4))
    assert all(np.array_equal(a.named_parameters()[k].data, b.named_parameters()[k].data)
               for k in a.named_parameters())


def test_score_candidates(planted):
    m = micro(planted)
    assert score_candidates(m, 0, [5])[0][0] == 5
    with pytest.raises(ValueError):
        score_candidates(m, 0, [1, 2, 1])
    with pytest.raises(ValueError):
        score_candidates(m, 0, [])
    a = score_candidates(m, 2, [4, 9, 1, 17, 3])
    b = score_candidates(m, 2, [17, 3, 1, 9, 4])
    assert a == b
    assert [s for _, s in a] == sorted((s for _, s in a), reverse=True)


def test_ties_go_to_smaller_index(planted):
    m = micro(planted)
    for p in m.tower.parameters():
        p.data[...] = 0.0
    assert [i for i, _ in score_candidates(m, 0, [9, 2, 5])] == [2, 5, 9]


def test_context_swap_changes_scores(planted):
    m = micro(planted)
    users, items = np.arange(10), np.arange(10)
    before = m.score_pairs(users, items)
    _, users_map, items_map, uf, _ = planted
    flipped = FeatureTable(uf.dim, {k: v[::-1].copy() for k, v in uf.entries.items()}, uf.kind)
    Y, ctx, _, _ = world(planted, uf=flipped)
    frozen = m.user_vectors.tobytes()
    m.set_context(ctx)
    after = m.score_pairs(users, items)
    assert not np.allclose(before, after)
    assert m.user_vectors.tobytes() == frozen
    with pytest.raises(ShapeError):
        m.set_context(ContextFeatures(ContextSchema(), list(users_map), list(items_map)))


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_trains(planted, variant):
    m = micro(planted, variant)
    stats = train_epoch(m, TrainConfig(batch_size=64), np.random.default_rng(0))
    assert np.isfinite(stats.mean_loss)
    s = m.score_pairs([0, 1], [2, 3])
    assert ((s > 0) & (s < 1)).all()


def test_no_interest_ignores_history(planted):
    m = micro(planted, "no_interest")
    pairs, users, items, _, _ = planted
    s1 = m.score_pairs([0, 1], [2, 3], seed=1)
    assert np.array_equal(s1, m.score_pairs([0, 1], [2, 3], seed=2))
    assert not hasattr(m, "valuation")


def test_state_dict_round_trip(planted):
    a = micro(planted)
    train_epoch(a, TrainConfig(batch_size=64), np.random.default_rng(0))
    b = micro(planted)
    b.load_state_dict(a.state_dict())
    assert np.array_equal(a.score_pairs([0, 1, 2], [3, 4, 5]), b.score_pairs([0, 1, 2], [3, 4, 5]))
    assert all(p.step == a.named_parameters()[k].step for k, p in b.named_parameters().items())
    state = a.state_dict()
    state["param/tower.0.bias"] = np.zeros(3)
    with pytest.raises(ShapeError):
        b.load_state_dict(state)
