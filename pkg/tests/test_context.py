import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hysage.autograd import gradient_check, sum_squares
from hysage.context import (ContextFeatures, ContextSchema, CrossNetwork, FieldSpec, Fusion, assemble_x0,
                            cross_layer, cross_network, fuse)
from hysage.data import FeatureTable
from hysage.errors import ConfigError, ShapeError

vec = lambda n: arrays(np.float64, n, elements=st.floats(-3, 3))  # noqa: E731


def table(rows, kind="dense"):
    rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    return FeatureTable(len(next(iter(rows.values()))), rows, kind)


def schema(user, item, inter=(), depth=2):
    spec = lambda role, ts: [FieldSpec(f"{role}{k}", t.kind, table=t) for k, t in enumerate(ts)]  # noqa: E731
    return ContextSchema(spec("u", user), spec("i", item), spec("c", inter), depth)


def test_assemble_concatenates_in_schema_order():
    s = schema([table({"a": [1, 0]})], [table({"x": [0, 2, 0]})], [table({"a|x": [5]})])
    assert s.dims == [2, 3, 1] and s.total_dim == 6
    assert assemble_x0("a", "x", s).tolist() == [1, 0, 0, 2, 0, 5]


def test_missing_rows_become_zeros(caplog):
    s = schema([table({"a": [1, 1]})], [table({"x": [3]})])
    assert assemble_x0("b", "x", s).tolist() == [0, 0, 3]
    assert "no user row" in caplog.text


def test_dim_mismatch_rejected():
    s = schema([table({"a": [1, 1]})], [table({"x": [3]})])
    with pytest.raises(ShapeError):
        assemble_x0("a", "x", s, expected_dims=[3, 1])
    with pytest.raises(ShapeError):
        assemble_x0("a", "x", s, tables={"u0": table({"a": [1, 2, 3]})}, expected_dims=s.dims)


def test_negative_depth_rejected():
    with pytest.raises(ConfigError):
        ContextSchema(cross_depth=-1)


def test_batched_assembly_matches_single():
    s = schema([table({"a": [1, 0], "b": [0, 1]})], [table({"x": [2.0], "y": [3.0]})],
               [table({"a|y": [7.0, 8.0]})])
    cf = ContextFeatures(s, ["a", "b"], ["x", "y"])
    got = cf.assemble(np.array([0, 1, 0]), np.array([1, 0, 0]))
    want = [assemble_x0(u, i, s) for u, i in (("a", "y"), ("b", "x"), ("a", "x"))]
    assert np.array_equal(got, np.array(want))


def test_empty_schema_gives_one_zero_column():
    cf = ContextFeatures(ContextSchema(), ["a"], ["x"])
    assert cf.dim == 1 and cf.assemble(np.array([0]), np.array([0])).tolist() == [[0.0]]


def test_without_kinds_drops_fields():
    s = schema([table({"a": [1]}, "pretrained"), table({"a": [1]}, "categorical-onehot")], [table({"x": [1]})])
    assert [f.kind for _, f in s.without_kinds(["pretrained"]).fields()] == ["categorical-onehot", "dense"]


# ---------------------------------------------------------------- crossing

def test_cross_layer_examples():
    xl = np.array([0.3, -1.0])
    assert cross_layer([4.0, 5.0], xl, np.zeros(2), np.zeros(2)).data.tolist() == xl.tolist()
    assert cross_layer([1.0, 2.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]).data.tolist() == [2.0, 3.0]
    assert np.allclose(cross_layer([4.0, 5.0], xl, np.zeros(2), [0.5, 0.5]).data, xl + 0.5)


def test_cross_layer_length_mismatch():
    with pytest.raises(ShapeError):
        cross_layer([1.0, 2.0], [1.0, 2.0, 3.0], np.zeros(2), np.zeros(2))


def _zero(net):
    for p in net.parameters():
        p.data[...] = 0.0
    return net


def test_cross_network_examples():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=5)
    assert np.array_equal(cross_network(x0, CrossNetwork(5, 0, rng)).data, x0)
    assert np.array_equal(cross_network(x0, _zero(CrossNetwork(5, 2, rng))).data, x0)
    one = CrossNetwork(5, 1, rng)
    assert np.allclose(cross_network(x0, one).data, cross_layer(x0, x0, one.weights[0], one.biases[0]).data)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 4), st.integers(0, 10_000))
def test_cross_network_preserves_width(d, depth, seed):
    rng = np.random.default_rng(seed)
    net = CrossNetwork(d, depth, rng)
    assert cross_network(rng.normal(size=(3, d)), net).shape == (3, d)


# ---------------------------------------------------------------- fusion

def test_fuse_equal_logits_is_midpoint():
    f = _zero(Fusion(3, np.random.default_rng(0)))
    assert np.allclose(fuse([1.0, 2.0, 3.0], [3.0, 2.0, 1.0], f).data, [2.0, 2.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(vec(4), st.integers(0, 1000))
def test_fuse_of_identical_inputs(x, seed):
    f = Fusion(4, np.random.default_rng(seed))
    for p in f.parameters():
        p.data[...] = np.random.default_rng(seed + 1).normal(size=p.data.shape)
    assert np.allclose(fuse(x, x, f).data, x)


def test_fuse_hand_logits():
    f = _zero(Fusion(2, np.random.default_rng(0)))
    f.b0.data[...] = np.arctanh(0.9)
    x0, xL = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    a0 = np.exp(0.9) / (np.exp(0.9) + 1.0)
    assert np.allclose(fuse(x0, xL, f).data, [a0, 1 - a0], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(vec(3), vec(3), st.integers(0, 1000))
def test_fused_vector_is_on_segment(x0, xL, seed):
    f = Fusion(3, np.random.default_rng(seed))
    alpha = f.weights(x0, xL).data
    assert (alpha > 0).all() and abs(alpha.sum() - 1) < 1e-12
    assert np.allclose(fuse(x0, xL, f).data, alpha[0] * x0 + alpha[1] * xL)


def test_fuse_shape_mismatch():
    with pytest.raises(ShapeError):
        fuse([1.0], [1.0, 2.0], Fusion(2, np.random.default_rng(0)))


def test_context_gradients():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(4, 5))
    net, f = CrossNetwork(5, 2, rng), Fusion(5, rng)
    for p in net.parameters() + f.parameters():
        p.data[...] = rng.normal(0, 0.5, p.data.shape)
    loss = lambda: sum_squares([fuse(x0, cross_network(x0, net), f)])  # noqa: E731
    assert gradient_check(loss, net.parameters() + f.parameters()) < 1e-4
