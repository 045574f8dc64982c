import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cantdr import detector as det
from cantdr.scenario import ALIEN_POSITION, attack_stream, attack_topology
from cantdr.sim import (MeasurementSeries, PulseSpec, SimConfig, Waveform, noisy_captures,
                        superimpose_can_traffic)

V = 2e8
DT = 5e-11
T0 = 5e-9

# a small synthetic setup keeps the statistical tests fast
SMALL = det.CalibrationConfig(window_length=256, segment_len=64)


def synthetic(n=1024, echo=0.0, echo_at=600):
    i = np.arange(n)
    x = 0.3 * np.exp(-0.5 * ((i - 150) / 8.0) ** 2)
    x = x + echo * np.exp(-0.5 * ((i - echo_at) / 3.0) ** 2)
    x[: int(round(T0 / DT))] = 0.0
    return Waveform(T0, DT, x)


class TestConfig:
    def test_defaults(self):
        cfg = det.CalibrationConfig()
        assert (cfg.n_reference, cfg.n_average) == (300, 30)
        assert cfg.threshold_policy == det.ThresholdPolicy("baseline_max_plus", 0.01)
        assert (cfg.k_sigma, cfg.hold) == (5.0, 5)

    @pytest.mark.parametrize("kw", [{"n_reference": 10, "n_average": 30}, {"n_average": 0},
                                    {"window_length": 100, "segment_len": 64}, {"velocity": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            det.CalibrationConfig(**kw)

    def test_policy_parse(self):
        assert det.ThresholdPolicy.parse("fixed:0") == det.ThresholdPolicy("fixed", 0.0)
        assert det.ThresholdPolicy.parse("baseline_max_plus:0.05").value == 0.05
        with pytest.raises(ValueError):
            det.ThresholdPolicy.parse("median:1")


class TestCalibrate:
    def test_noise_free(self):
        series = noisy_captures(synthetic(), 0.0, 0, 300)
        cfg = det.CalibrationConfig(window_length=256, segment_len=64,
                                    threshold_policy=det.ThresholdPolicy("fixed", 0.0))
        model = det.calibrate(series, cfg)
        assert model.noise_sigma_estimate == 0.0
        assert model.baseline_scores == (0.0,) * 10
        assert model.threshold == 0.0

    def test_noise_estimate(self):
        model = det.calibrate(noisy_captures(synthetic(), 1e-3, 1, 300), SMALL)
        assert model.noise_sigma_estimate == pytest.approx(1e-3, rel=0.1)
        assert len(model.baseline_scores) == 10
        assert model.threshold >= max(model.baseline_scores)
        assert model.threshold == pytest.approx(max(model.baseline_scores) + 0.01)

    def test_insufficient(self):
        with pytest.raises(ValueError):
            det.calibrate(noisy_captures(synthetic(), 1e-3, 1, 10), SMALL)

    def test_reference_is_mean(self):
        series = noisy_captures(synthetic(), 1e-2, 2, 300)
        model = det.calibrate(series, SMALL)
        np.testing.assert_allclose(model.reference_waveform.samples, series.as_array().mean(axis=0), rtol=0, atol=1e-15)


class TestLocate:
    def test_identical(self):
        w = synthetic()
        assert det.locate_change(w, w, V, 0.0) is None

    def test_synthetic_delay(self):
        n = 4000
        ref = Waveform(T0, DT, np.zeros(n))
        diff = np.zeros(n)
        onset = int(round((T0 + 98.6e-9) / DT))
        diff[onset:onset + 40] = 0.01
        assert det.locate_change(ref, ref.with_samples(diff), V, 1e-4) == pytest.approx(9.86, abs=V * DT / 2)

    def test_hold_rejects_spikes(self):
        ref = Waveform(T0, DT, np.zeros(1000))
        x = np.zeros(1000)
        x[300] = x[302] = 1.0
        x[700:710] = 1.0
        d = det.locate_change(ref, ref.with_samples(x), V, 0.01, k_sigma=5, hold=5)
        assert d == pytest.approx(V * (700 * DT - T0) / 2)

    def test_errors(self):
        w = synthetic()
        with pytest.raises(ValueError):
            det.locate_change(w, w, 0.0, 0.0)
        with pytest.raises(ValueError):
            det.locate_change(w, Waveform(T0, DT, np.zeros(10)), V, 0.0)

    @given(st.integers(101, 3900), st.floats(1e-4, 1.0))
    def test_exact_on_noise_free_differences(self, idx, amp):
        ref = Waveform(T0, DT, np.zeros(4000))
        diff = np.zeros(4000)
        diff[idx:idx + 50] = amp
        d = det.locate_change(ref, ref.with_samples(diff), V, 0.0)
        assert abs(d - V * (idx * DT - T0) / 2) <= V * DT / 2 + 1e-12


class TestGuard:
    def test_pure_capture_clean(self, attack_traces):
        w = attack_traces.reference
        assert det.activity_guard(w, w.t0_index, 0.01) == "clean"

    def test_sub_gate_noise_clean(self, attack_traces):
        w = noisy_captures(attack_traces.reference, 1e-3, 3, 1)[0]
        assert det.activity_guard(w, w.t0_index, 5e-3) == "clean"

    @pytest.mark.parametrize("start", [-1e-6, 0.0, 120e-9])
    def test_dominant_overlay(self, attack_traces, start):
        w = superimpose_can_traffic(attack_traces.reference, 500e3, [0, 1], 2.0, start=start)
        assert det.activity_guard(w, w.t0_index, 0.01) == "contaminated"

    def test_full_bit_plateau(self):
        w = Waveform(0.0, 1e-8, np.zeros(1000))
        w = superimpose_can_traffic(w, 500e3, [1, 0, 1, 1, 1], 2.0)
        assert det.activity_guard(w, 10, 0.01) == "contaminated"

    def test_bad_prefix(self):
        with pytest.raises(ValueError):
            det.activity_guard(synthetic(), 5000, 0.01)


@pytest.fixture(scope="module")
def attack_model(attack_traces):
    return det.calibrate(noisy_captures(attack_traces.reference, 0.01, 11, 300))


class TestDetect:
    def test_unchanged(self, attack_traces, attack_model):
        rep = det.detect(attack_model, noisy_captures(attack_traces.reference, 0.01, 12, 30))
        assert not rep.alien_present
        assert rep.scores["coherence_k"] <= attack_model.threshold
        assert rep.estimated_distance is None

    def test_alien(self, attack_traces, attack_model):
        rep = det.detect(attack_model, noisy_captures(attack_traces.compromised, 0.01, 13, 30))
        assert rep.alien_present and not rep.contaminated
        assert rep.estimated_distance == pytest.approx(ALIEN_POSITION, abs=0.3)

    def test_contaminated(self, attack_traces, attack_model):
        caps = list(noisy_captures(attack_traces.compromised, 0.01, 14, 30).captures)
        caps[7] = superimpose_can_traffic(caps[7], 500e3, [0], 2.0, start=60e-9)
        rep = det.detect(attack_model, MeasurementSeries(tuple(caps)))
        assert rep.contaminated and not rep.alien_present
        assert rep.estimated_distance is None

    def test_uses_latest_batch(self, attack_traces, attack_model):
        stream = attack_stream(attack_traces, 0.01, 15, 2, 30, attach_batch=2, attach_offset=0)
        assert det.detect(attack_model, stream).alien_present
        assert not det.detect(attack_model, stream[:30]).alien_present

    def test_errors(self, attack_traces, attack_model):
        with pytest.raises(ValueError):
            det.detect(attack_model, noisy_captures(attack_traces.reference, 0.01, 1, 29))
        other = noisy_captures(synthetic(), 0.01, 1, 30)
        with pytest.raises(ValueError):
            det.detect(attack_model, other)

    def test_model_not_mutated(self, attack_traces, attack_model):
        before = copy.deepcopy(attack_model)
        det.detect(attack_model, noisy_captures(attack_traces.compromised, 0.01, 16, 30))
        np.testing.assert_array_equal(before.reference_waveform.samples,
                                      attack_model.reference_waveform.samples)
        assert before.baseline_scores == attack_model.baseline_scores
        assert before.threshold == attack_model.threshold
        assert before.method_thresholds == attack_model.method_thresholds

    def test_zero_noise_same_topology(self, attack_traces):
        model = det.calibrate(noisy_captures(attack_traces.reference, 0.0, 0, 300),
                              det.CalibrationConfig(threshold_policy=det.ThresholdPolicy("fixed", 0.0)))
        rep = det.detect(model, noisy_captures(attack_traces.reference, 0.0, 0, 30))
        assert rep.scores["coherence_k"] == 0.0 and not rep.alien_present

    def test_report_serialisation(self, attack_traces, attack_model):
        rep = det.detect(attack_model, noisy_captures(attack_traces.compromised, 0.01, 17, 30))
        text = rep.to_text()
        assert "alien_present: true" in text and "coherence_k: " in text
        row = rep.to_csv_row("2024-01-01T00:00:00").split(",")
        assert len(row) == len(det.DetectionReport.CSV_HEADER.split(","))
        assert row[5] == "1" and row[7] == "0"
        assert float(row[6]) == pytest.approx(ALIEN_POSITION, abs=0.3)


class TestStream:
    def test_straddling_batch(self, attack_traces, attack_model):
        stream = attack_stream(attack_traces, 0.01, 18, 6, 30, attach_batch=4)
        reps = det.detect_stream(attack_model, stream)
        assert len(reps) == 6
        assert not any(r.alien_present for r in reps[:3])
        assert all(r.alien_present for r in reps[4:])

    def test_straddle_mostly_post_attack_rises(self, attack_traces, attack_model):
        stream = attack_stream(attack_traces, 0.01, 18, 6, 30, attach_batch=4, attach_offset=5)
        k = [r.scores["coherence_k"] for r in det.detect_stream(attack_model, stream)]
        assert k[3] > max(k[:3])

    def test_unchanged_stream(self, attack_traces, attack_model):
        reps = det.detect_stream(attack_model, attack_stream(attack_traces, 0.01, 19, 4, 30, None))
        assert not any(r.alien_present for r in reps)


def test_false_positives_shrink_with_averaging():
    clean = synthetic()
    rates = {}
    # single captures calibrate on 60 batches to keep the run short
    for n_avg, n_ref in ((1, 60), (30, 300)):
        cfg = det.CalibrationConfig(n_reference=n_ref, n_average=n_avg, window_length=256, segment_len=64)
        fp = 0
        for trial in range(200):
            model = det.calibrate(noisy_captures(clean, 0.01, 1000 + trial, n_ref), cfg)
            rep = det.detect(model, noisy_captures(clean, 0.01, 5000 + trial, n_avg), cfg)
            fp += rep.alien_present
        rates[n_avg] = fp / 200
    print(f"false-positive rate: n_average=1 {rates[1]:.3f}, n_average=30 {rates[30]:.3f}")
    assert rates[30] <= rates[1]


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 20.0), st.booleans(), st.integers(0, 1000))
def test_common_gain_invariance(gain, changed, seed):
    ref_series = noisy_captures(synthetic(), 0.005, seed, 300)
    act_series = noisy_captures(synthetic(echo=0.05 if changed else 0.0), 0.005, seed + 1, 30)

    def scaled(series, g):
        return MeasurementSeries.from_array(T0, DT, series.as_array() * g)

    base = det.detect(det.calibrate(ref_series, SMALL), act_series, SMALL)
    scaled_rep = det.detect(det.calibrate(scaled(ref_series, gain), SMALL), scaled(act_series, gain), SMALL)
    assert scaled_rep.alien_present == base.alien_present
    assert (scaled_rep.scores["coherence_k"] > 0) == (base.scores["coherence_k"] > 0)


class TestBenchmark:
    def test_empty(self):
        table = det.benchmark_methods(attack_topology(), [], 3)
        assert table.labels == ()
        assert table.render().count("\n") == 6

    def test_unknown_label(self):
        with pytest.raises(KeyError):
            det.benchmark_methods(attack_topology(), ["Nope"], 1)

    def test_zero_noise_coherence(self):
        cfg = SimConfig(duration=200e-9)
        table = det.benchmark_methods(attack_topology(), ["Engine", "DSC"], 2, PulseSpec(), cfg,
                                      noise_sigma=0.0)
        assert table.labels == ("Engine", "DSC")
        assert [table.verdict("coherence_k", lb) for lb in table.labels] == ["✓", "✓"]
        assert "Coherence Analysis" in table.render()

    def test_verdict_symbols(self):
        table = det.BenchmarkTable(("A", "B", "C"), 4, {m: (4, 2, 0) for m in det.METHODS})
        assert [table.verdict("mse", lb) for lb in "ABC"] == ["✓", "(✓)", "-"]
        assert table.rate("mse", "B") == 0.5
        assert table.to_csv().splitlines()[0] == "method,A_verdict,A_rate,B_verdict,B_rate,C_verdict,C_rate"
