"""Attention variants against scalar oracles, plus mask and slope contracts."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swat_lab.attention import (
    BandMask,
    RopeParams,
    alibi_bias,
    banded_attention,
    rope_angles,
    rope_rotate,
    sigmoid_attention,
    slope_schedule,
    softmax_attention,
    swat_attention,
)
from swat_lab.errors import ConfigError, ContractError, DimensionError
from swat_lab.tensor import Tensor

from reference import (
    balanced_slopes_oracle,
    rotate_pairs,
    sigmoid_attention_oracle,
    softmax_attention_oracle,
    swat_attention_oracle,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestSlopeSchedule:
    def test_balanced_eight_heads(self):
        sched = slope_schedule(8, "balanced")
        assert sched.as_array().tolist() == balanced_slopes_oracle(8)

    def test_negative_half_comes_first(self):
        s = slope_schedule(4, "balanced").as_array()
        assert (s[:2] < 0).all() and (s[2:] > 0).all()

    def test_magnitudes_halve(self):
        s = slope_schedule(8, "balanced").as_array()
        mags = np.abs(s[:4])
        assert np.allclose(mags[1:] / mags[:-1], 0.5)

    def test_single_direction_uses_all_heads(self):
        neg = slope_schedule(3, "negative").as_array()
        assert neg.tolist() == [-0.5, -0.25, -0.125]
        pos = slope_schedule(3, "positive").as_array()
        assert pos.tolist() == [0.5, 0.25, 0.125]

    def test_balanced_requires_even_heads(self):
        with pytest.raises(ConfigError):
            slope_schedule(5, "balanced")

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            slope_schedule(4, "spiral")


class TestAlibiBias:
    def test_is_slope_times_distance(self):
        assert alibi_bias(7, 3, -0.25) == pytest.approx(-1.0)
        assert alibi_bias(7, 3, 0.25) == pytest.approx(1.0)

    def test_zero_at_self(self):
        assert alibi_bias(5, 5, -0.5) == 0.0

    def test_future_key_rejected(self):
        with pytest.raises(ContractError):
            alibi_bias(3, 4, -0.5)


class TestBandMask:
    def test_visible_counts(self):
        mask = BandMask(seq_len=6, window=3).matrix
        assert mask.sum(axis=1).tolist() == [1, 2, 3, 3, 3, 3]

    def test_band_edges(self):
        mask = BandMask(seq_len=5, window=2).matrix
        assert mask[3, 2] and mask[3, 3]
        assert not mask[3, 1] and not mask[3, 4]

    def test_window_at_least_seq_len_is_full_causal(self):
        mask = BandMask(seq_len=4, window=9).matrix
        assert np.array_equal(mask, np.tril(np.ones((4, 4), dtype=bool)))

    def test_window_one_is_diagonal(self):
        mask = BandMask(seq_len=4, window=1).matrix
        assert np.array_equal(mask, np.eye(4, dtype=bool))

    def test_matrix_is_immutable(self):
        mask = BandMask(seq_len=4, window=2).matrix
        with pytest.raises(ValueError):
            mask[0, 0] = False

    def test_invalid_geometry(self):
        with pytest.raises(ContractError):
            BandMask(seq_len=0, window=2)
        with pytest.raises(ContractError):
            BandMask(seq_len=4, window=0)


class TestRope:
    def test_angles_shape_and_first_frequency(self):
        params = RopeParams(head_dim=8)
        cos, sin = rope_angles(params, np.arange(5))
        assert cos.shape == (5, 4)
        assert cos[3, 0] == pytest.approx(np.cos(3.0))
        assert sin[3, 0] == pytest.approx(np.sin(3.0))

    def test_rotation_matches_pair_oracle(self):
        params = RopeParams(head_dim=6)
        x = rng(4).standard_normal((3, 6))
        out = rope_rotate(Tensor(x), np.arange(3), params).data
        for row in range(3):
            assert np.allclose(out[row], rotate_pairs(list(x[row]), row, 10000.0), atol=1e-14)

    def test_rotation_preserves_norm(self):
        params = RopeParams(head_dim=8)
        x = rng(5).standard_normal((4, 8))
        out = rope_rotate(Tensor(x), np.arange(4) + 7, params).data
        assert np.allclose(np.linalg.norm(out, axis=-1), np.linalg.norm(x, axis=-1), atol=1e-12)

    def test_scalar_position_broadcasts(self):
        params = RopeParams(head_dim=4)
        x = rng(6).standard_normal((3, 4))
        a = rope_rotate(Tensor(x), 5, params).data
        b = rope_rotate(Tensor(x), np.array([5, 5, 5]), params).data
        assert np.array_equal(a, b)

    def test_relative_identity(self):
        """Rotated dot products depend only on position difference."""
        params = RopeParams(head_dim=16)
        r = rng(7)
        q, k = r.standard_normal(16), r.standard_normal(16)
        base = None
        for shift in range(64):
            m, n = 40 + shift, 10 + shift
            rq = rope_rotate(Tensor(q.reshape(1, -1)), np.array([m]), params).data[0]
            rk = rope_rotate(Tensor(k.reshape(1, -1)), np.array([n]), params).data[0]
            dot = float(rq @ rk)
            if base is None:
                base = dot
            assert abs(dot - base) < 1e-10

    def test_odd_head_dim_rejected(self):
        with pytest.raises(DimensionError):
            RopeParams(head_dim=5)


class TestAttentionOracles:
    def test_softmax_attention_matches_oracle(self):
        r = rng(10)
        q, k, v = (r.standard_normal((7, 4)) for _ in range(3))
        mask = BandMask(seq_len=7, window=7)
        ours = softmax_attention(Tensor(q), Tensor(k), Tensor(v), mask).data
        assert np.max(np.abs(ours - softmax_attention_oracle(q, k, v))) < 1e-12

    def test_sigmoid_attention_matches_oracle(self):
        r = rng(11)
        q, k, v = (r.standard_normal((9, 4)) for _ in range(3))
        mask = BandMask(seq_len=9, window=3)
        ours = sigmoid_attention(Tensor(q), Tensor(k), Tensor(v), mask).data
        assert np.max(np.abs(ours - sigmoid_attention_oracle(q, k, v, window=3))) < 1e-12

    @settings(max_examples=20)
    @given(st.integers(0, 2**31 - 1))
    def test_swat_attention_matches_compositional_oracle(self, seed):
        r = rng(seed)
        heads = int(r.integers(1, 5)) * 2
        n = int(r.integers(2, 17))
        d = int(r.integers(1, 5)) * 2
        window = int(r.integers(1, n + 1))
        q, k, v = (r.standard_normal((heads, n, d)) for _ in range(3))
        sched = slope_schedule(heads, "balanced")
        ours = swat_attention(
            Tensor(q), Tensor(k), Tensor(v),
            BandMask(seq_len=n, window=window), sched, RopeParams(head_dim=d),
        ).data
        oracle = swat_attention_oracle(q, k, v, window, list(sched.slopes))
        assert np.max(np.abs(ours - oracle)) < 1e-10

    def test_swat_slope_count_must_match_heads(self):
        r = rng(1)
        q, k, v = (r.standard_normal((4, 5, 2)) for _ in range(3))
        with pytest.raises(ConfigError):
            swat_attention(Tensor(q), Tensor(k), Tensor(v), BandMask(seq_len=5, window=2),
                           slope_schedule(2, "balanced"), RopeParams(head_dim=2))


class TestBandedAttention:
    def test_weights_outside_band_are_exactly_zero(self):
        r = rng(12)
        q, k, v = (r.standard_normal((2, 6, 4)) for _ in range(3))
        mask = BandMask(seq_len=6, window=2)
        collected = []
        banded_attention(Tensor(q), Tensor(k), Tensor(v), mask,
                         activation="sigmoid", collect_weights=collected)
        w = collected[0].data
        assert np.all(w[:, ~mask.matrix] == 0.0)

    def test_zero_slopes_reduce_to_plain_sigmoid(self):
        r = rng(13)
        q, k, v = (r.standard_normal((2, 5, 4)) for _ in range(3))
        mask = BandMask(seq_len=5, window=3)
        plain = banded_attention(Tensor(q), Tensor(k), Tensor(v), mask, activation="sigmoid").data
        zeroed = banded_attention(Tensor(q), Tensor(k), Tensor(v), mask,
                                  slopes=np.zeros(2), activation="sigmoid").data
        assert np.array_equal(plain, zeroed)

    def test_softmax_full_window_equals_plain_softmax(self):
        r = rng(14)
        q, k, v = (r.standard_normal((6, 4)) for _ in range(3))
        mask = BandMask(seq_len=6, window=6)
        banded = banded_attention(Tensor(q[None]), Tensor(k[None]), Tensor(v[None]),
                                  mask, activation="softmax").data[0]
        assert np.allclose(banded, softmax_attention_oracle(q, k, v), atol=1e-12)

    def test_normalized_sigmoid_divides_by_visible_count(self):
        r = rng(15)
        q, k, v = (r.standard_normal((2, 6, 4)) for _ in range(3))
        mask = BandMask(seq_len=6, window=3)
        raw, scaled = [], []
        banded_attention(Tensor(q), Tensor(k), Tensor(v), mask, activation="sigmoid",
                         collect_weights=raw)
        banded_attention(Tensor(q), Tensor(k), Tensor(v), mask, activation="sigmoid",
                         normalize_sigmoid=True, collect_weights=scaled)
        counts = mask.matrix.sum(axis=-1)[None, :, None]
        assert np.allclose(scaled[0].data, raw[0].data / counts, atol=1e-15)

    def test_unknown_activation(self):
        r = rng(16)
        q, k, v = (r.standard_normal((1, 4, 2)) for _ in range(3))
        with pytest.raises(ConfigError):
            banded_attention(Tensor(q), Tensor(k), Tensor(v),
                             BandMask(seq_len=4, window=2), activation="tanh")
