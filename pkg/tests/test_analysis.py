import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvdd.analysis import (CoherenceFit, IllConditioned, NoDecayObserved, default_times, fit_power_law,
                           fit_stretched_exp, protocol_ranking, stretched_exp, synthesize, t2_vs_n)
from nvdd.engine import CoherenceCurve, ContrastPoint, ExperimentConfig, ScanRow, contrast_vs_n_scan
from nvdd.noise import BathParams, hahn_b_estimate
from nvdd.sequences import ErrorModel

GRID_A = [0.3, 0.5, 0.7, 0.9, 1.1]
GRID_T2 = [1e-5, 3e-4, 1e-3, 5e-3, 3e-2]
GRID_P = [0.5, 1.0, 1.7, 2.5, 4.0]


def curve_from(t, y):
    return CoherenceCurve(tuple(ContrastPoint(float(a), float(b), 0.0) for a, b in zip(t, y)), "x", 1, "Sx")


def scan(values):
    """ScanRows from {(protocol, n): (sx, sy)}."""
    rows = []
    for (proto, n), (sx, sy) in values.items():
        rows += [ScanRow(proto, "Sx", n, sx, 0.0), ScanRow(proto, "Sy", n, sy, 0.0)]
    return rows


class TestStretchedFit:
    def test_single_example(self):
        fit = fit_stretched_exp(synthesize(default_times(1e-3), 1.0, 1e-3, 1.5))
        assert fit.amplitude == pytest.approx(1.0, rel=1e-6)
        assert fit.t2 == pytest.approx(1e-3, rel=1e-6)
        assert fit.exponent == pytest.approx(1.5, rel=1e-6)
        assert fit.residual_rms < 1e-9

    @pytest.mark.parametrize("amplitude,t2,exponent", list(itertools.product(GRID_A, GRID_T2, GRID_P)))
    def test_noiseless_grid(self, amplitude, t2, exponent):
        fit = fit_stretched_exp(synthesize(default_times(t2), amplitude, t2, exponent))
        np.testing.assert_allclose(fit.params, (amplitude, t2, exponent), rtol=1e-6)

    def test_noisy_t2_within_five_percent(self):
        rng = np.random.default_rng(2024)
        errs = []
        for _ in range(100):
            curve = synthesize(default_times(1e-3), 1.0, 1e-3, 1.5, noise_sd=0.01, rng=rng)
            errs.append(fit_stretched_exp(curve).t2 / 1e-3 - 1)
        assert max(abs(e) for e in errs) <= 0.05
        assert abs(np.mean(errs)) < 3 * np.std(errs) / 10

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        curve = synthesize(default_times(2e-3), 0.9, 2e-3, 2.2, noise_sd=0.02, rng=rng)
        a, b = fit_stretched_exp(curve), fit_stretched_exp(curve)
        assert a.params == b.params and a.nfev == b.nfev
        np.testing.assert_array_equal(a.covariance, b.covariance)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.2, 1.15), st.floats(1e-6, 1.0), st.floats(0.5, 4.0))
    def test_fit_within_bounds(self, amplitude, t2, exponent):
        rng = np.random.default_rng(0)
        fit = fit_stretched_exp(synthesize(default_times(t2), amplitude, t2, exponent, noise_sd=0.01, rng=rng))
        assert 0 <= fit.amplitude <= 1.2
        assert 0.5 <= fit.exponent <= 4.0
        assert fit.t2 > 0 and fit.t2_err >= 0

    def test_covariance_reflects_noise(self):
        rng = np.random.default_rng(3)
        t = default_times(1e-3)
        lo = fit_stretched_exp(synthesize(t, 1, 1e-3, 1.5, noise_sd=0.001, rng=rng))
        hi = fit_stretched_exp(synthesize(t, 1, 1e-3, 1.5, noise_sd=0.03, rng=rng))
        assert hi.t2_err > 5 * lo.t2_err
        assert isinstance(lo, CoherenceFit) and lo.covariance.shape == (3, 3)

    def test_no_decay(self):
        t = np.linspace(1e-4, 1e-3, 10)
        with pytest.raises(NoDecayObserved):
            fit_stretched_exp(synthesize(t, 1.0, 1.0, 1.0))
        with pytest.raises(NoDecayObserved):
            fit_stretched_exp(curve_from(t, np.ones(10)))

    @pytest.mark.parametrize("y", [[0.0] * 6, [1e-4, 0, 0, 0, 0, 0]])
    def test_ill_conditioned(self, y):
        with pytest.raises(IllConditioned):
            fit_stretched_exp(curve_from(np.linspace(1, 6, 6), y))

    def test_needs_five_points(self):
        with pytest.raises(ValueError, match="5 points"):
            fit_stretched_exp(synthesize([1, 2, 3, 4], 1, 2, 1))

    def test_stretched_exp_value(self):
        assert stretched_exp(2.0, 0.8, 2.0, 3.0) == pytest.approx(0.8 / math.e)


class TestPowerLaw:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-5, 1e-1), st.floats(-1.0, 2.0))
    def test_exact_recovery(self, prefactor, s):
        n = np.array([1, 4, 16, 64, 256, 1024])
        law = fit_power_law(n, prefactor * n.astype(float) ** s)
        assert law.exponent == pytest.approx(s, abs=1e-9)
        assert law.prefactor == pytest.approx(prefactor, rel=1e-8)
        assert law(16) == pytest.approx(prefactor * 16.0 ** s, rel=1e-8)

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            fit_power_law([8], [1e-3])


class TestRanking:
    def test_ideal_tie_alphabetical(self):
        rows = scan({(p, 64): (1.0, 1.0) for p in ("xy8", "cpmg", "cxy8", "kdd_xy8")})
        ranking = protocol_ranking(rows)
        assert [e.protocol for e in ranking] == ["cpmg", "cxy8", "kdd_xy8", "xy8"]
        assert {e.rank for e in ranking} == {1}

    def test_near_equal_values_tie(self):
        rows = scan({("b", 8): (0.9, 0.9), ("a", 8): (0.9 * (1 + 1e-11), 0.9), ("c", 8): (0.95, 0.95)})
        ranking = protocol_ranking(rows)
        assert [(e.rank, e.protocol) for e in ranking] == [(1, "c"), (2, "a"), (2, "b")]

    def test_worst_case_component(self):
        rows = scan({("cpmg", 8): (1.0, 0.1), ("xy8", 8): (0.8, 0.85)})
        ranking = protocol_ranking(rows)
        assert [e.protocol for e in ranking] == ["xy8", "cpmg"]
        assert ranking[1].worst_case == 0.1
        assert ranking[1].by_component == {"Sx": 1.0, "Sy": 0.1}

    def test_largest_common_n(self):
        rows = scan({("xy8", 8): (0.5, 0.5), ("xy8", 512): (0.9, 0.9),
                     ("cxy8", 8): (0.6, 0.6), ("cxy8", 456): (0.99, 0.99), ("cxy8", 512): (0.1, 0.1)})
        assert protocol_ranking(rows)[0].n == 512
        assert protocol_ranking(rows, n=8)[0].protocol == "cxy8"

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-1, 1.2), st.floats(-1, 1.2)), min_size=2, max_size=6),
           st.floats(1e-3, 1e3), st.randoms())
    def test_invariances(self, pairs, scale, rnd):
        names = [f"p{i}" for i in range(len(pairs))]
        rows = scan({(nm, 64): v for nm, v in zip(names, pairs)})
        base = [(e.rank, e.protocol) for e in protocol_ranking(rows)]
        shuffled = list(rows)
        rnd.shuffle(shuffled)
        assert [(e.rank, e.protocol) for e in protocol_ranking(shuffled)] == base
        scaled = [ScanRow(r.protocol, r.component, r.n, r.relative_contrast * scale, 0.0) for r in rows]
        assert [e.protocol for e in protocol_ranking(scaled)] == [p for _, p in base]

    def test_rejects_missing_component(self):
        rows = [ScanRow("xy8", "Sx", 8, 1.0, 0.0)]
        with pytest.raises(ValueError, match="Sy"):
            protocol_ranking(rows)
        with pytest.raises(ValueError):
            protocol_ranking([])

    def test_reference_error_model_ordering(self):
        cfg = ExperimentConfig(error_model=ErrorModel(0.15, 0.25))
        rows = contrast_vs_n_scan(["cpmg", "xy4", "xy8", "cxy8"], [8, 456, 512], 1e-7, cfg)
        at_512 = protocol_ranking([r for r in rows if r.protocol != "cxy8"], n=512)
        assert at_512[-1].protocol == "cpmg"
        at_456 = protocol_ranking(rows)
        assert at_456[0].n == 456 and at_456[0].protocol == "cxy8"


@pytest.fixture(scope="module")
def bath_config():
    bath = BathParams(b=hahn_b_estimate(0.7e-3, 10e-3), tau_c=10e-3)
    return ExperimentConfig(bath=bath, n_realizations=400)


class TestT2VsN:
    def test_n1_row_equals_hahn(self, bath_config):
        cpmg_table = t2_vs_n("cpmg", [1], bath_config, t2_guess=0.7e-3, n_points=16)
        hahn_table = t2_vs_n("hahn", [1], bath_config, t2_guess=0.7e-3, n_points=16)
        assert cpmg_table.rows[0].fit.t2 == hahn_table.rows[0].fit.t2
        assert cpmg_table.rows[0].fit.t2 == pytest.approx(0.7e-3, rel=0.05)
        assert cpmg_table.power_law is None

    def test_xy8_increasing_with_positive_exponent(self, bath_config):
        table = t2_vs_n("xy8", [8, 32, 128], bath_config, t2_guess=2e-3, n_points=16)
        t2 = [r.fit.t2 for r in table.rows]
        assert all(b > a for a, b in zip(t2, t2[1:]))
        assert table.power_law.exponent > 0

    def test_failed_rows_are_kept(self, bath_config):
        table = t2_vs_n("xy8", [8, 12], bath_config, t2_guess=2e-3, n_points=12)
        assert [r.ok for r in table.rows] == [True, False]
        assert "multiple of 8" in table.rows[1].error
        assert len(table.successful()) == 1

    def test_fixed_time_grid(self, bath_config):
        times = default_times(0.7e-3, 12)
        table = t2_vs_n("hahn", [1], bath_config, times=times)
        np.testing.assert_allclose(table.rows[0].curve.times, times, rtol=1e-15)

    def test_no_decay_row_flagged(self):
        table = t2_vs_n("xy8", [8], ExperimentConfig(), t2_guess=1e-3, n_points=8)
        assert not table.rows[0].ok and "stays above" in table.rows[0].error

    def test_requires_ascending(self, bath_config):
        with pytest.raises(ValueError):
            t2_vs_n("xy8", [16, 8], bath_config)
