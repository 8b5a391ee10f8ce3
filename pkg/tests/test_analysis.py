"""Sparsity ratio law, extreme-value trend, density supports, sink statistics."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swat_lab.analysis import (
    CostEstimate,
    EvtSample,
    SinkReport,
    cost_model,
    density_check,
    density_check_model,
    evt_sim,
    evt_sweep,
    measure_delta,
    measure_linearity,
    sink_report,
    sparsity_demo,
)
from swat_lab.errors import ContractError, DataError
from swat_lab.model import ModelConfig, build_model

REFERENCE_SCORES = [1.5, 5.0, 2.4, 0.5, 1.3]


def small_model(activation="softmax", pos_mode="rope", slope_mode="none", vocab=259, seed=4):
    return build_model(
        ModelConfig(
            vocab_size=vocab, d_model=32, n_heads=2, n_layers=2, window=8,
            activation=activation, pos_mode=pos_mode, slope_mode=slope_mode, seed=seed,
        )
    )


class TestSparsityDemo:
    def test_reference_vector_rounds_as_published(self):
        demo = sparsity_demo(REFERENCE_SCORES)
        assert np.round(demo.softmax_weights, 2).tolist() == [0.03, 0.88, 0.07, 0.01, 0.02]

    def test_ratio_law_on_reference(self):
        assert sparsity_demo(REFERENCE_SCORES).max_ratio_err < 1e-12

    @given(
        st.lists(st.floats(min_value=-6.0, max_value=6.0), min_size=1, max_size=16),
    )
    @settings(deadline=None, max_examples=100)
    def test_pairwise_ratio_law(self, scores):
        demo = sparsity_demo(scores)
        w = demo.softmax_weights
        e = np.asarray(scores)
        ratio = w[:, None] / w[None, :]
        predicted = np.exp(e[:, None] - e[None, :])
        err = np.abs(ratio - predicted) / np.maximum(1.0, np.abs(predicted))
        assert float(err.max()) < 1e-12

    def test_constant_scores_give_unit_ratios(self):
        demo = sparsity_demo([0.7] * 6)
        assert np.all(demo.ratios == 1.0)
        assert np.all(demo.predicted_ratios == 1.0)

    def test_typical_to_max_gap_at_1024(self):
        # A typical score sits sqrt(2 ln 1024) below the expected max, so its
        # weight relative to the winner is exp(-3.723...) ~ 0.0242.
        gap = math.sqrt(2.0 * math.log(1024))
        demo = sparsity_demo([gap, 0.0])
        assert demo.ratios[1] == pytest.approx(0.0242, abs=5e-4)
        assert math.exp(-gap) == pytest.approx(0.0242, abs=5e-4)

    def test_validation(self):
        with pytest.raises(ContractError):
            sparsity_demo([])
        with pytest.raises(ContractError):
            sparsity_demo([1.0, math.inf])


class TestExtremeValues:
    def test_sample_validation(self):
        with pytest.raises(ContractError):
            EvtSample(L=0, mu=0.0, sigma=1.0, trials=1000, mean_max=0.0)
        with pytest.raises(ContractError):
            EvtSample(L=4, mu=0.0, sigma=0.0, trials=1000, mean_max=0.0)
        with pytest.raises(ContractError):
            EvtSample(L=4, mu=0.0, sigma=1.0, trials=999, mean_max=0.0)

    def test_predicted_formula(self):
        s = EvtSample(L=1024, mu=1.0, sigma=2.0, trials=1000, mean_max=5.0)
        assert s.predicted == pytest.approx(1.0 + 2.0 * math.sqrt(2.0 * math.log(1024)))

    def test_ratio_nan_when_prediction_is_zero(self):
        s = EvtSample(L=1, mu=0.0, sigma=1.0, trials=1000, mean_max=0.01)
        assert math.isnan(s.ratio)

    def test_max_of_one_is_just_the_mean(self):
        s = evt_sim(L=1, trials=10000, seed=0)
        assert abs(s.mean_max) < 0.04  # 4 standard errors of a 10k-sample mean

    def test_location_scale_reuse_is_exact(self):
        base = evt_sim(L=64, trials=5000, seed=9)
        shifted = evt_sim(L=64, mu=2.0, sigma=3.0, trials=5000, seed=9)
        assert shifted.mean_max == pytest.approx(2.0 + 3.0 * base.mean_max, rel=1e-15)

    def test_sweep_band_and_trend(self):
        samples = evt_sweep([2**6, 2**8, 2**10, 2**12, 2**14], trials=10000, seed=0)
        ratios = [s.ratio for s in samples]
        means = [s.mean_max for s in samples]
        assert all(0.80 <= r <= 1.00 for r in ratios), ratios
        assert ratios == sorted(ratios), ratios
        assert means == sorted(means)

    def test_sweep_requires_lengths(self):
        with pytest.raises(ContractError):
            evt_sweep([])


class TestDensity:
    def test_reference_supports_reported_honestly(self):
        report = density_check(REFERENCE_SCORES)
        assert report.softmax_support == {0.001: 5, 0.01: 4, 0.05: 2}
        assert report.sigmoid_support == {0.001: 5, 0.01: 5, 0.05: 5}
        assert report.softmax_max_weight == pytest.approx(0.877, abs=5e-3)
        assert report.sigmoid_max_weight == pytest.approx(0.9933, abs=5e-4)

    def test_constant_scores_keep_equal_sigmoid_weights(self):
        report = density_check([0.0] * 5)
        assert np.all(report.sigmoid_weights == report.sigmoid_weights[0])
        assert report.sigmoid_support[0.01] == report.softmax_support[0.01] == 5

    def test_narrower_sigmoid_raises(self):
        # Deeply negative scores switch the sigmoid row off entirely while
        # softmax must still renormalize; that inversion is flagged.
        with pytest.raises(ContractError):
            density_check([-10.0, -10.0, -10.0])

    def test_elementwise_independence_is_exact(self):
        base = sparsity_demo(REFERENCE_SCORES)
        bumped_scores = list(REFERENCE_SCORES)
        bumped_scores[3] += 2.7
        bumped = sparsity_demo(bumped_scores)
        keep = [0, 1, 2, 4]
        assert np.array_equal(base.sigmoid_weights[keep], bumped.sigmoid_weights[keep])
        assert not np.any(base.softmax_weights[keep] == bumped.softmax_weights[keep])

    def test_model_rows_give_one_report_per_head(self):
        model = small_model(activation="sigmoid", pos_mode="alirope", slope_mode="balanced")
        tokens = np.random.default_rng(1).integers(0, 256, size=31)
        reports = density_check_model(model, tokens)
        assert len(reports) == model.cfg.n_heads
        for r in reports:
            assert r.scores.size == model.cfg.window
            assert set(r.softmax_support) == {0.001, 0.01, 0.05}


class TestSink:
    @pytest.mark.parametrize("activation,pos_mode,slope_mode", [
        ("softmax", "rope", "none"),
        ("sigmoid", "alirope", "balanced"),
    ])
    def test_untrained_share_near_uniform(self, activation, pos_mode, slope_mode):
        model = small_model(activation, pos_mode, slope_mode)
        tokens = np.random.default_rng(0).integers(0, 256, size=127)
        report = sink_report(model, tokens)
        n = report.n_tokens
        assert n == 128
        for share in report.first_share:
            assert 1.0 / (3 * n) < share < 3.0 / n

    def test_softmax_raw_mass_equals_share(self):
        model = small_model()
        tokens = np.random.default_rng(0).integers(0, 256, size=63)
        report = sink_report(model, tokens)
        assert np.allclose(report.first_share, report.first_mass_raw, atol=1e-12)

    def test_entropy_bounded_by_log_n(self):
        model = small_model()
        tokens = np.random.default_rng(2).integers(0, 256, size=63)
        report = sink_report(model, tokens)
        assert np.all(report.entropy > 0)
        assert np.all(report.entropy <= math.log(report.n_tokens) + 1e-9)

    def test_token_identity_shuffle_leaves_share_scale(self):
        model = small_model()
        rng = np.random.default_rng(3)
        tokens = rng.integers(0, 256, size=127)
        a = sink_report(model, tokens)
        b = sink_report(model, rng.permutation(tokens))
        for x, y in zip(a.first_share, b.first_share):
            assert 0.5 < x / y < 2.0

    def test_input_validation(self):
        model = small_model()
        with pytest.raises(DataError):
            sink_report(model, np.zeros((2, 8), dtype=np.int64))
        with pytest.raises(DataError):
            sink_report(model, np.arange(5))

    def test_report_guards(self):
        ok = dict(
            n_tokens=8, first_mass_raw=np.array([0.1]), var_token0=np.array([1.0]),
            var_rest=np.array([1.0]), entropy=np.array([1.0]),
        )
        with pytest.raises(ContractError):
            SinkReport(activation="softmax", first_share=np.array([1.5]), **ok)
        with pytest.raises(ContractError):
            SinkReport(
                activation="sigmoid", first_share=np.array([0.1]),
                **{**ok, "var_token0": np.array([-1.0])},
            )

    def test_uniform_share_and_serialization(self, tmp_path):
        model = small_model()
        tokens = np.random.default_rng(4).integers(0, 256, size=63)
        report = sink_report(model, tokens)
        assert report.uniform_share == pytest.approx(1.0 / 64)
        out = tmp_path / "sink.json"
        report.to_json(out)
        doc = json.loads(out.read_text())
        assert doc["n_tokens"] == 64
        assert len(doc["first_share"]) == model.cfg.n_layers
        heat = tmp_path / "maps"
        report.to_csv_dir(heat)
        files = sorted(p.name for p in heat.iterdir())
        assert files == ["attention_layer0.csv", "attention_layer1.csv"]
        rows = (heat / "attention_layer0.csv").read_text().strip().splitlines()
        assert len(rows) == 64 and len(rows[0].split(",")) == 64


class TestCost:
    def test_reference_arithmetic(self):
        est = cost_model(8192, 512, 0.05)
        assert est.predicted_cost == 8192 * 512 * 1.05
        assert est.predicted_cost == pytest.approx(4404019.2, rel=1e-12)

    def test_zero_overhead_is_n_times_w(self):
        assert cost_model(1024, 128, 0.0).predicted_cost == 1024 * 128

    def test_bounds(self):
        with pytest.raises(ContractError):
            cost_model(100, 200, 0.0)
        with pytest.raises(ContractError):
            cost_model(100, 0, 0.0)
        with pytest.raises(ContractError):
            CostEstimate(n_tokens=100, window=10, delta=0.5)
        with pytest.raises(ContractError):
            CostEstimate(n_tokens=100, window=10, delta=-0.1)

    def test_measured_overhead_clamped_nonnegative(self):
        d = measure_delta(n_tokens=512, window=128, repeats=5, seed=0)
        assert 0.0 <= d < 2.0

    def test_measure_delta_validation(self):
        with pytest.raises(ContractError):
            measure_delta(repeats=3)
        with pytest.raises(ContractError):
            measure_delta(n_heads=3)

    def test_linearity_fit_on_small_model(self):
        model = build_model(
            ModelConfig(
                vocab_size=64, d_model=32, n_heads=2, n_layers=1, window=16,
                activation="sigmoid", pos_mode="alirope", slope_mode="balanced", seed=0,
            )
        )
        report = measure_linearity(model, [32, 64, 128, 256], repeats=2)
        assert report.slope > 0
        assert report.seconds == sorted(report.seconds)
        assert report.r_squared > 0.9

    def test_linearity_needs_three_lengths(self):
        model = small_model()
        with pytest.raises(ContractError):
            measure_linearity(model, [16, 32])
