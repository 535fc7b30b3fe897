import math
import warnings

import numpy as np
import pytest
from statsmodels.stats.multitest import multipletests

from sylrhythm import stats, synth, trf
from sylrhythm.errors import DataError

from oracles import bh_by_hand

FDR_VECTORS = [
    [0.01, 0.02, 0.03],
    [0.5, 0.9],
    [0.04],
    [0.001, 0.2, 0.013, 0.04, 0.041, 0.9, 0.3, 0.0005],
    [0.05, 0.05, 0.01, 1.0, 0.3, 0.3],
]


class TestPearson:
    def test_identity(self, rng):
        x = rng.standard_normal(20)
        assert stats.pearson(x, x) == pytest.approx(1.0, abs=1e-15)

    def test_affine_negative(self, rng):
        x = rng.standard_normal(20)
        assert stats.pearson(x, -2 * x + 7) == pytest.approx(-1.0, abs=1e-15)

    def test_hand_value(self):
        # cov = 1.5, var_x = 1, var_y = 7/3  ->  r = 1.5 / sqrt(7/3)
        assert stats.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(1.5 / math.sqrt(7 / 3), rel=1e-15)
        assert stats.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9819, abs=1e-4)

    def test_matches_numpy(self, rng):
        x, y = rng.standard_normal((2, 50))
        assert stats.pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], rel=1e-12)

    def test_errors(self):
        with pytest.raises(DataError, match="constant"):
            stats.pearson([1, 1, 1], [1, 2, 3])
        with pytest.raises(DataError):
            stats.pearson([1, 2], [2, 1])
        with pytest.raises(DataError):
            stats.pearson([1, 2, 3], [1, 2])


def _kernel_predictions(n=30, seed=0, shuffle_seed=None):
    sents, truth = synth.kernel_corpus(n, seed=seed, dur_range=(1.5, 2.5))
    pairs = synth.envelope_pairs(sents, snr_db=0.0, seed=seed + 1)
    model = trf.TRFModel(np.array(truth["kernel"]["taps"]), 1.0, 0.0)
    preds = [trf.predict_envelope(model, o) for o, _ in pairs]
    envs = [e.values for _, e in pairs]
    if shuffle_seed is not None:
        envs = [envs[j] for j in np.random.default_rng(shuffle_seed).permutation(n)]
    return preds, envs


class TestPermutation:
    def test_phase_locked(self):
        preds, envs = _kernel_predictions()
        res = stats.permutation_test(stats.pairing_score(preds, envs), len(preds), 1000, seed=1)
        assert res.p_value <= 5 / 1001
        assert res.exceed_count == round(res.p_value * 1001) - 1

    def test_formula(self):
        preds, envs = _kernel_predictions(12, shuffle_seed=3)
        score = stats.pairing_score(preds, envs)
        res = stats.permutation_test(score, 12, 1000, seed=7)
        rng = np.random.default_rng(7)
        null = [score(rng.permutation(12)) for _ in range(1000)]
        a = sum(v >= score(np.arange(12)) for v in null)
        assert res.p_value == (a + 1) / 1001
        np.testing.assert_array_equal(res.null_rs, null)

    def test_constant_score(self):
        res = stats.permutation_test(lambda pairing: 0.3, 10, 1000, seed=0)
        assert res.p_value == 1.0
        assert res.exceed_count == 1000

    def test_needs_two(self):
        with pytest.raises(DataError):
            stats.permutation_test(lambda p: 0.0, 1)

    def test_pairing_truncates(self):
        score = stats.pairing_score([np.arange(5.0), np.arange(3.0)], [np.arange(4.0), np.arange(6.0)])
        assert score(np.array([0, 1])) == pytest.approx(1.0)
        assert np.isfinite(score(np.array([1, 0])))


class TestFDR:
    def test_examples(self):
        np.testing.assert_allclose(stats.fdr_correct([0.01, 0.02, 0.03]), [0.03, 0.03, 0.03], rtol=0, atol=1e-17)
        assert list(stats.fdr_correct([0.04])) == [0.04]
        np.testing.assert_allclose(stats.fdr_correct([0.5, 0.9]), [0.9, 0.9], rtol=0, atol=0)

    @pytest.mark.parametrize("p", FDR_VECTORS)
    def test_bit_exact_vs_hand(self, p):
        assert list(stats.fdr_correct(p)) == bh_by_hand(p)

    @pytest.mark.parametrize("p", FDR_VECTORS)
    def test_vs_statsmodels(self, p):
        np.testing.assert_allclose(stats.fdr_correct(p), multipletests(p, method="fdr_bh")[1], rtol=1e-14)

    def test_bounds(self):
        with pytest.raises(DataError):
            stats.fdr_correct([0.0, 0.5])
        with pytest.raises(DataError):
            stats.fdr_correct([1.2])
        assert stats.fdr_correct([]).size == 0


class TestWeightedMean:
    def test_examples(self):
        assert stats.weighted_mean_correlation([0.2, 0.6], [1, 3]) == pytest.approx(0.5)
        assert stats.weighted_mean_correlation([0.1, 0.5, 0.6], [2, 2, 2]) == pytest.approx(0.4)
        assert stats.weighted_mean_correlation([0.42], [7.0]) == 0.42

    def test_errors(self):
        with pytest.raises(DataError):
            stats.weighted_mean_correlation([0.1], [0.0])
        with pytest.raises(DataError):
            stats.weighted_mean_correlation([0.1, 0.2], [1.0])


class TestSubsets:
    def test_two_of_two_second(self):
        idx = stats.duration_subsets([2.0] * 6, 4.0, seed=0)
        assert len(idx) == 2

    def test_whole(self):
        d = [1.5, 2.5, 3.0]
        assert sorted(stats.duration_subsets(d, sum(d), seed=3)) == [0, 1, 2]

    def test_seeds_differ_contract_holds(self, rng):
        d = rng.uniform(1, 4, 40)
        subsets = [stats.duration_subsets(d, 20.0, seed=s) for s in range(5)]
        assert len({tuple(sorted(s)) for s in subsets}) > 1
        for s in subsets:
            total = d[s].sum()
            assert total >= 20.0 and total - d[s[-1]] < 20.0

    def test_insufficient(self):
        with pytest.warns(stats.SubsetWarning):
            assert stats.duration_subsets([1.0, 1.0], 4.0) is None


class TestSigmoid:
    def test_recovery(self):
        d = 2.0 ** np.arange(2, 11)
        r = stats.sigmoid_curve(np.log2(d), 0.2, 0.6, 7.0, 1.0)
        fit = stats.fit_sigmoid(d, r)
        for got, want in zip((fit.floor, fit.ceiling, fit.center, fit.slope), (0.2, 0.6, 7.0, 1.0)):
            assert got == pytest.approx(want, abs=1e-3)
        assert fit.duration_at_95 == pytest.approx(2 ** (7 + math.log(19)), rel=1e-3)
        assert fit(d) == pytest.approx(r, abs=1e-6)

    def test_95_percent_point(self):
        d = 2.0 ** np.arange(2, 11)
        fit = stats.fit_sigmoid(d, stats.sigmoid_curve(np.log2(d), 0.1, 0.9, 5.0, 0.7))
        y = fit([fit.duration_at_95])[0]
        assert (y - fit.floor) / (fit.ceiling - fit.floor) == pytest.approx(0.95, abs=1e-9)

    def test_decreasing_curve_has_no_95(self):
        d = 2.0 ** np.arange(2, 11)
        fit = stats.fit_sigmoid(d, stats.sigmoid_curve(np.log2(d), 0.6, 0.2, 6.0, 1.0))
        assert fit.floor < fit.ceiling and fit.slope < 0
        assert fit.duration_at_95 is None

    def test_constant_degenerate(self):
        fit = stats.fit_sigmoid(2.0 ** np.arange(2, 8), [0.4] * 6)
        assert fit.degenerate
        assert fit.ceiling - fit.floor == pytest.approx(0.0, abs=1e-12)
        assert fit.duration_at_95 is None

    def test_too_few_points(self):
        with pytest.raises(DataError):
            stats.fit_sigmoid([4, 8, 16], [0.1, 0.2, 0.3])
