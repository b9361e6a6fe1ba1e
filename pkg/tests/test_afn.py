import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from dan import afn
from dan.afn import LossWeights
from dan.nn import Linear
from dan.tensor import ShapeError, Tensor


def test_scale_features_anchors():
    v = afn.scale_features(Tensor(np.zeros((1, 2, 3)))).data
    assert np.allclose(v, -math.log(2), atol=1e-15, rtol=0)
    v4 = afn.scale_features(Tensor(np.full((1, 4, 1), 7.0))).data
    assert np.allclose(v4, -math.log(4), atol=1e-15, rtol=0)
    v = afn.scale_features(Tensor(np.array([0.0, math.log(3)]).reshape(1, 2, 1))).data.ravel()
    assert v == pytest.approx([-math.log(4), math.log(3) - math.log(4)], abs=1e-15)


def test_partition_anchors():
    def pt(values):
        return afn.partition_loss(Tensor(np.array(values, dtype=float).reshape(1, -1, 1))).item()

    assert pt([0, 2]) == pytest.approx(math.log(3), abs=1e-15)
    assert pt([0, 4]) == pytest.approx(math.log(1.5), abs=1e-15)
    assert pt([1, 1, 1, 1]) == pytest.approx(math.log(1 + 4 / 1e-6), abs=1e-12)
    assert pt([1, 1, 1, 1]) == pytest.approx(15.202, abs=1e-3)


def test_partition_single_head_is_an_error():
    with pytest.raises(ValueError, match="single head"):
        afn.partition_loss(Tensor(np.zeros((2, 1, 3))))


def test_fuse_and_classify():
    v = np.random.default_rng(3).normal(size=(2, 3, 4))
    clf = Linear(4, 4, np.random.default_rng(0))
    clf.weight.data[...] = np.eye(4)
    clf.bias.data[...] = 0.0
    assert np.array_equal(afn.fuse_and_classify(Tensor(v), clf).data, v.sum(axis=1))
    clf2 = Linear(4, 3, np.random.default_rng(1))
    out = afn.fuse_and_classify(Tensor(v), clf2).data
    ref = v.sum(axis=1) @ clf2.weight.data.T + clf2.bias.data
    assert np.abs(out - ref).max() < 1e-12
    with pytest.raises(ShapeError):
        afn.fuse_and_classify(Tensor(v), Linear(5, 3, np.random.default_rng(0)))


def test_total_loss_arithmetic():
    af, pt, cls = Tensor(np.array(2.0)), Tensor(np.array(math.log(3))), Tensor(np.array(math.log(7)))
    assert afn.total_loss(af, pt, cls, LossWeights()).item() == pytest.approx(5.044522, abs=1e-6)
    assert afn.total_loss(af, pt, cls, LossWeights(0.0, 0.0)).item() == cls.item()
    assert afn.total_loss(None, None, cls, LossWeights(0.0, 0.0)).item() == cls.item()
    with pytest.raises(ValueError):
        afn.total_loss(None, pt, cls, LossWeights(1.0, 1.0))


def test_combine_agrees_with_total_loss_bitwise():
    r = np.random.default_rng(0)
    for _ in range(100):
        a, p, c = r.uniform(0, 100, size=3)
        w = LossWeights(*r.uniform(0, 2, size=2))
        t = afn.total_loss(Tensor(np.array(a)), Tensor(np.array(p)), Tensor(np.array(c)), w).item()
        assert afn.combine(a, p, c, w) == t


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_loss_weights_validation(bad):
    with pytest.raises(ValueError):
        LossWeights(bad, 1.0)


heads_arrays = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 6), st.integers(1, 4)), elements=st.floats(-30, 30))


@settings(max_examples=300)
@given(heads_arrays, st.floats(-50, 50))
def test_scaling_normalizes_and_ignores_shifts(a, shift):
    v = afn.scale_features(Tensor(a))
    assert afn.head_normalization_error(v) < 1e-6
    assert np.all(v.data <= 0)
    shifted = afn.scale_features(Tensor(a + shift)).data
    assert np.abs(shifted - v.data).max() < 1e-10
    assert np.abs(v.data - oracles.log_softmax_heads(a)).max() < 1e-10


@settings(max_examples=300)
@given(heads_arrays)
def test_partition_matches_oracle_and_is_positive(a):
    v = afn.scale_features(Tensor(a))
    value = afn.partition_loss(v).item()
    assert abs(value - oracles.partition(v.data)) < 1e-10
    assert value > 0


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1), st.floats(1.01, 10.0))
def test_partition_falls_as_heads_spread(seed, stretch):
    # scaling deviations from the head mean by c > 1 multiplies every variance by c^2
    r = np.random.default_rng(seed)
    v = r.normal(size=(2, 4, 3))
    mean = v.mean(axis=1, keepdims=True)
    wider = mean + stretch * (v - mean)
    assert afn.partition_loss(Tensor(wider)).item() < afn.partition_loss(Tensor(v)).item()
