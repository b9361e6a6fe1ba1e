import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dan import functional as F
from dan.man import (
    AttentionHead,
    ChannelUnit,
    SpatialUnit,
    channel_attention,
    head_overlap,
    man_forward,
    mean_off_diagonal,
    spatial_attention,
)
from dan.tensor import ShapeError, Tensor, no_grad


def _maps(rng, B=2, D=8, h=4):
    return Tensor(np.abs(rng.normal(size=(B, D, h, h))))


def test_spatial_gate_shape_and_range(rng):
    unit = SpatialUnit(8, rng)
    x = _maps(rng)
    s, gate = spatial_attention(x, unit)
    assert gate.shape == x.shape
    assert np.all((gate.data > 0) & (gate.data < 1))
    assert np.abs(s.data - x.data * unit.gate(x).data).max() < 1e-14


def test_spatial_unit_starts_unsaturated(rng):
    gate = SpatialUnit(128, rng).gate(_maps(rng, D=128)).data
    assert 0.05 < gate.min() and gate.max() < 0.95


def test_forced_gates(rng):
    unit = SpatialUnit(8, rng)
    x = _maps(rng)
    unit.restore.bias.data[...] = 1e3  # saturate to 1
    for conv in unit.convs():
        conv.weight.data[...] = 0.0
    s, _ = spatial_attention(x, unit)
    assert np.array_equal(s.data, x.data)
    unit.restore.bias.data[...] = -1e3
    s, _ = spatial_attention(x, unit)
    assert not s.data.any()


def test_channel_attention_composition(rng):
    unit = ChannelUnit(8, rng)
    s = _maps(rng)
    a, gate = channel_attention(s, unit)
    assert gate.shape == (2, 8) and a.shape == (2, 8)
    pooled = F.global_avg_pool(s).data
    hidden = np.maximum(pooled @ unit.squeeze.weight.data.T + unit.squeeze.bias.data, 0.0)
    g = 1.0 / (1.0 + np.exp(-(hidden @ unit.excite.weight.data.T + unit.excite.bias.data)))
    assert np.abs(gate.data - g).max() < 1e-14
    assert np.abs(a.data - oracles.plane_means(s.data * g[:, :, None, None])).max() < 1e-14


def test_channel_identity_gate_and_zero_input(rng):
    unit = ChannelUnit(8, rng)
    unit.excite.weight.data[...] = 0.0
    unit.excite.bias.data[...] = 1e3
    s = _maps(rng)
    a, _ = channel_attention(s, unit)
    assert np.array_equal(a.data, F.global_avg_pool(s).data)
    a0, _ = channel_attention(Tensor(np.zeros((2, 8, 4, 4))), ChannelUnit(8, rng))
    assert not a0.data.any()


def test_unit_shape_errors(rng):
    with pytest.raises(ShapeError):
        SpatialUnit(8, rng).gate(Tensor(np.zeros((1, 4, 3, 3))))
    with pytest.raises(ShapeError):
        ChannelUnit(8, rng).gate(Tensor(np.zeros((1, 4, 3, 3))))


def test_man_forward_matches_isolated_heads(rng):
    heads = [AttentionHead(8, rng) for _ in range(4)]
    x = _maps(rng)
    out = man_forward(x, heads)
    assert out.vectors.shape == (2, 4, 8)
    assert out.spatial_gates.shape == (2, 4, 8, 4, 4)
    for j, head in enumerate(heads):
        a, gate = head(x)
        assert np.array_equal(out.vectors.data[:, j], a.data)
        assert np.array_equal(out.spatial_gates.data[:, j], gate.data)


def test_man_forward_is_permutation_equivariant(rng):
    heads = [AttentionHead(8, rng) for _ in range(3)]
    x = _maps(rng)
    base = man_forward(x, heads).vectors.data
    perm = [2, 0, 1]
    moved = man_forward(x, [heads[p] for p in perm]).vectors.data
    assert np.array_equal(moved, base[:, perm])


def test_identical_heads_give_identical_vectors(rng):
    x = _maps(rng)
    h1 = AttentionHead(8, np.random.default_rng(5))
    h2 = AttentionHead(8, np.random.default_rng(5))
    out = man_forward(x, [h1, h2]).vectors.data
    assert np.array_equal(out[:, 0], out[:, 1])


def test_man_needs_heads(rng):
    with pytest.raises(ValueError):
        man_forward(_maps(rng), [])


def test_head_params_are_k_times_one_head(rng):
    one = AttentionHead(16, rng).num_parameters()
    heads = [AttentionHead(16, rng) for _ in range(5)]
    assert sum(h.num_parameters() for h in heads) == 5 * one


# head overlap --------------------------------------------------------------


def test_overlap_identical_and_disjoint():
    g = np.zeros((1, 2, 1, 2, 2))
    g[0, 0, 0, 0] = 1.0
    g[0, 1, 0, 1] = 1.0
    assert head_overlap(g)[0, 1] == 0.0
    same = np.repeat(np.random.default_rng(0).uniform(size=(3, 1, 4, 2, 2)), 2, axis=1)
    assert head_overlap(same)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_overlap_needs_two_heads():
    with pytest.raises(ValueError):
        head_overlap(np.ones((2, 1, 3, 2, 2)))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_overlap_matches_cosine_oracle(seed):
    g = np.random.default_rng(seed).uniform(size=(3, 4, 2, 3, 3))
    m = head_overlap(g)
    assert np.abs(m - oracles.cosine_overlap(g)).max() < 1e-12
    assert np.array_equal(m, m.T) and np.all(np.diag(m) == 1.0)
    off = mean_off_diagonal(m)
    assert off == pytest.approx((m.sum() - 4) / 12)


def test_gates_strictly_inside_unit_interval(rng):
    head = AttentionHead(8, rng)
    with no_grad():
        _, gate = head(Tensor(rng.normal(0, 5, size=(2, 8, 3, 3))))
    assert np.all((gate.data > 0) & (gate.data < 1))
