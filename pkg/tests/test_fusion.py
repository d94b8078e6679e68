import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hysage.autograd import gradient_check, sum_squares
from hysage.errors import ConfigError, ShapeError
from hysage.fusion import GlobalFusion, LocalInteraction, global_fuse, local_attention, local_interaction


def _zero(m):
    for p in m.parameters():
        p.data[...] = 0.0
    return m


def full_form(V_u, partner, block):
    """Reference: attend over the K explicit rows concat(V_u^k, partner)."""
    rows = np.concatenate([V_u, np.broadcast_to(partner, (len(V_u), len(partner)))], axis=1)
    logits = np.tanh((rows * block.W.data).sum(1) + block.b.data)
    a = np.exp(logits - logits.max())
    return (a / a.sum()) @ rows


def test_singleton_returns_concat():
    block = LocalInteraction(1, 3, np.random.default_rng(0), "ut")
    out = local_interaction([[1.0, 2.0]], [5.0], block)
    assert out.data.tolist() == [1.0, 2.0, 5.0]


def test_zero_params_average_rows():
    block = _zero(LocalInteraction(3, 3, np.random.default_rng(0), "ut"))
    V = np.array([[1.0, 0.0], [0.0, 3.0], [2.0, 0.0]])
    assert np.allclose(local_interaction(V, [4.0], block).data, [1.0, 1.0, 4.0])


def test_hand_set_logits():
    # logits pass through tanh before the softmax, so they live in (-1, 1)
    block = _zero(LocalInteraction(2, 3, np.random.default_rng(0), "uc"))
    t = 0.5
    block.b.data[:] = [0.0, np.arctanh(t)]
    V = np.array([[4.0, 0.0], [0.0, 4.0]])
    a1 = np.exp(t) / (1 + np.exp(t))
    assert np.allclose(local_interaction(V, [1.0], block).data, [4 * (1 - a1), 4 * a1, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_pooled_form_equals_full_form(K, du, dp, seed):
    rng = np.random.default_rng(seed)
    block = LocalInteraction(K, du + dp, rng, "ut")
    block.W.data[...] = rng.normal(size=block.W.data.shape)
    block.b.data[...] = rng.normal(size=K)
    V, partner = rng.normal(size=(K, du)), rng.normal(size=dp)
    assert np.allclose(local_interaction(V, partner, block).data, full_form(V, partner, block))
    w = local_attention(V, partner, block).data
    assert (w > 0).all() and abs(w.sum() - 1) < 1e-12


def test_batched_local_matches_rows():
    rng = np.random.default_rng(2)
    block = LocalInteraction(3, 5, rng, "ut")
    V, P = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3))
    got = local_interaction(V, P, block).data
    assert np.allclose(got, [full_form(V[b], P[b], block) for b in range(4)])


def test_local_shape_errors():
    block = LocalInteraction(2, 3, np.random.default_rng(0), "ut")
    with pytest.raises(ShapeError):
        local_interaction(np.ones((3, 2)), [1.0], block)
    with pytest.raises(ShapeError):
        local_interaction(np.ones((2, 2)), [1.0, 2.0], block)


# ---------------------------------------------------------------- global

def test_single_rep_is_its_projection():
    g = GlobalFusion({"a": 3}, 2, np.random.default_rng(0))
    x = np.array([1.0, -2.0, 0.5])
    assert np.allclose(global_fuse({"a": x}, g).data, x @ g.proj["a"].data)


def test_identical_projections():
    g = GlobalFusion({"a": 2, "b": 2}, 2, np.random.default_rng(0))
    g.proj["b"].data[...] = g.proj["a"].data
    x = np.array([0.3, 0.9])
    assert np.allclose(global_fuse({"a": x, "b": x}, g).data, x @ g.proj["a"].data)


def test_uniform_mix():
    g = _zero(GlobalFusion({"a": 2, "b": 2}, 2, np.random.default_rng(0)))
    g.proj["a"].data[...] = np.eye(2)
    g.proj["b"].data[...] = np.eye(2)
    assert global_fuse({"a": [1.0, 0.0], "b": [0.0, 1.0]}, g).data.tolist() == [0.5, 0.5]


def test_unregistered_name():
    g = GlobalFusion({"a": 2}, 2, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        global_fuse({"zzz": [1.0, 0.0]}, g)
    with pytest.raises(ShapeError):
        global_fuse({}, g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_global_convexity_and_compositionality(seed):
    rng = np.random.default_rng(seed)
    widths = {"a": 2, "b": 3, "c": 1}
    g = GlobalFusion(widths, 3, rng)
    for p in g.parameters():
        p.data[...] = rng.normal(size=p.data.shape)
    reps = {n: rng.normal(size=w) for n, w in widths.items()}
    out, alpha = global_fuse(reps, g, return_weights=True)
    alpha = alpha.data
    assert (alpha > 0).all() and abs(alpha.sum() - 1) < 1e-12
    Z = np.array([reps[n] @ g.proj[n].data for n in widths])
    assert np.allclose(out.data, alpha @ Z)
    # dropping "c" and renormalising the other weights equals fusing {a, b}
    reduced = global_fuse({n: reps[n] for n in "ab"}, g).data
    assert np.allclose(reduced, (alpha[:2] / alpha[:2].sum()) @ Z[:2])


def test_fusion_gradients():
    rng = np.random.default_rng(4)
    block = LocalInteraction(3, 5, rng, "ut")
    g = GlobalFusion({"r": 5, "x": 2}, 3, rng)
    params = block.parameters() + g.parameters()
    for p in params:
        p.data[...] = rng.normal(0, 0.7, p.data.shape)
    V, P, X = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    loss = lambda: sum_squares([global_fuse({"r": local_interaction(V, P, block), "x": X}, g)])  # noqa: E731
    assert gradient_check(loss, params) < 1e-4
