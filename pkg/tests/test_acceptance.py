"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL/SKIP line that is printed in the terminal
summary (see ``conftest.py``).
"""

import json
import os
import time

import numpy as np
import pytest
from scipy import stats as sps

from sylrhythm import analysis, modspec, seq2seq, stats, syllable_stats, synth, trf
from sylrhythm.cli import main
from sylrhythm.corpus_io import Waveform
from sylrhythm.envelope import EnvelopeSet, extract_envelopes

from conftest import ACCEPTANCE
from oracles import kde_mode_bruteforce, ridge_bruteforce

BIN = 0.05


def record(n, ok, detail):
    ACCEPTANCE[n] = ("PASS" if ok else "FAIL", detail)
    assert ok, f"criterion {n}: {detail}"


def test_01_modulation_peak(tmp_path):
    t0 = time.perf_counter()
    assert main(["synth", "am_noise", "--out", str(tmp_path / "am"), "--freq", "4", "--duration", "10"]) == 0
    assert main(["analyze", "--manifest", str(tmp_path / "am" / "manifest.jsonl"),
                 "--out", str(tmp_path / "out"), "--jobs", "1"]) == 0
    elapsed = time.perf_counter() - t0
    rep = json.loads((tmp_path / "out" / "speakers" / "am_noise__am.json").read_text())
    bb = rep["peaks"]["broadband"]["method1"]
    nb = rep["peaks"]["narrowband"]["method1"]
    ok = abs(bb - 4.0) <= 0.05 and abs(nb - 4.0) <= 0.05 and elapsed < 10.0
    record(1, ok, f"broadband {bb:.2f} Hz, narrowband {nb:.2f} Hz (4.00 +- 0.05), {elapsed:.1f} s (< 10 s)")


def test_02_time_scaling():
    worst = 0.0
    for f in (3.0, 4.0, 5.0):
        env = extract_envelopes(Waveform(synth.am_noise(f, 8.0, seed=int(f)), 16000)).broadband
        base = modspec.find_peak(modspec.modulation_spectrum(env))
        for alpha in (0.5, 2.0):
            peak = modspec.find_peak(modspec.modulation_spectrum(modspec.time_scale(env, alpha)))
            worst = max(worst, abs(peak - alpha * base), abs(peak - alpha * f))
    record(2, worst <= BIN + 1e-9, f"max |peak - alpha*f| = {worst:.3f} Hz over f in {{3,4,5}}, "
                                   f"alpha in {{0.5,2}} (<= one {BIN} Hz bin)")


def test_03_trf_oracle():
    t0 = time.perf_counter()
    sents, truth = synth.kernel_corpus(100, seed=0)
    true = np.array(truth["kernel"]["taps"])
    clean = synth.envelope_pairs(sents)
    rel = np.linalg.norm(trf.fit_trf(clean, 0.0).taps - true) / np.linalg.norm(true)
    noisy = synth.envelope_pairs(sents, snr_db=10.0, seed=1)
    corr = np.corrcoef(trf.fit_trf(noisy, 0.0).taps, true)[0, 1]
    cv = trf.cross_validated_power(clean).mean_r
    elapsed = time.perf_counter() - t0
    ok = rel <= 1e-6 and corr >= 0.95 and cv >= 0.999 and elapsed < 60
    record(3, ok, f"tap rel. error {rel:.1e} (<= 1e-6), 10 dB corr {corr:.4f} (>= 0.95), "
                  f"CV r {cv:.6f} (>= 0.999), {elapsed:.1f} s for 100 sentences (< 60 s)")


def test_04_normal_equations():
    rng = np.random.default_rng(4)
    worst = 0.0
    for trial in range(12):
        lengths = rng.integers(40, 90, size=rng.integers(1, 3))
        lengths = lengths[np.cumsum(lengths) <= 200] if lengths.sum() > 200 else lengths
        if lengths.sum() <= 52:
            lengths = np.array([80])
        onsets = [(rng.random(n) < 0.25).astype(float) for n in lengths]
        envs = [rng.standard_normal(n) + 1.0 for n in lengths]
        lam = [0.0, 1e-3, 0.7, 25.0][trial % 4]
        model = trf.fit_trf(list(zip(onsets, envs)), lam)
        taps, b0 = ridge_bruteforce(onsets, envs, lam)
        worst = max(worst, np.max(np.abs(model.taps - taps)), abs(model.intercept - b0))
    record(4, worst <= 1e-8, f"max |fit_trf - brute force| = {worst:.1e} on 12 instances <= 200 samples (<= 1e-8)")


def test_05_gradient_check():
    rng = np.random.default_rng(5)
    x = (rng.random(10) < 0.3).astype(float)
    y = rng.standard_normal(10)
    errs = {}
    for layers, frac in ((1, 1.0), (2, 1.0), (8, 0.25)):
        m = seq2seq.init_model(seq2seq.SeqModelConfig(n_layers=layers, hidden_size=4, seed=layers))
        errs[f"{layers}x4"] = seq2seq.gradient_check(m, x, y, fraction=frac, seed=layers)
    full = seq2seq.init_model(seq2seq.SeqModelConfig(seed=0))
    errs["8x64"] = seq2seq.gradient_check(full, x[:8], y[:8], fraction=0.0005, seed=0)
    worst = max(errs.values())
    detail = ", ".join(f"{k}: {v:.1e}" for k, v in errs.items())
    record(5, worst <= 1e-4, f"max relative error {detail} (<= 1e-4)")


def test_06_context_advantage():
    sents, _ = synth.context_corpus(120, seed=6)
    pairs = synth.envelope_pairs(sents)
    trf_r = trf.cross_validated_power(pairs).mean_r
    sp = seq2seq.split_sentences(range(len(pairs)), seed=6)
    cfg = seq2seq.SeqModelConfig(n_layers=2, hidden_size=16, learning_rate=3e-3, max_epochs=15,
                                 patience=5, seed=6)
    best, hist = seq2seq.train(seq2seq.init_model(cfg), [pairs[i] for i in sp.train],
                               [pairs[i] for i in sp.val], cfg)
    seq_r = seq2seq.evaluate(best, [pairs[i] for i in sp.test]).pooled_r
    record(6, seq_r - trf_r >= 0.1,
           f"sequence-model test r {seq_r:.3f} vs TRF CV r {trf_r:.3f}: margin {seq_r - trf_r:.3f} (>= 0.1)")


def _null_run(rng, model):
    preds, envs = [], []
    for _ in range(10):
        n = int(rng.integers(40, 70))
        s = (rng.random(n) < 0.2).astype(float)
        other = (rng.random(n) < 0.2).astype(float)
        preds.append(trf.predict_envelope(model, s))
        envs.append(trf.predict_envelope(model, other) + 0.3 * rng.standard_normal(n))
    return preds, envs


def test_07_permutation_calibration():
    sents, truth = synth.kernel_corpus(30, seed=7, dur_range=(1.5, 2.5))
    model = trf.TRFModel(np.array(truth["kernel"]["taps"]), 1.0, 0.0)
    pairs = synth.envelope_pairs(sents, snr_db=0.0, seed=8)
    preds = [trf.predict_envelope(model, o) for o, _ in pairs]
    envs = [e.values for _, e in pairs]
    locked = stats.permutation_test(stats.pairing_score(preds, envs), len(preds), 1000, seed=9)

    score = stats.pairing_score(preds, envs[::-1])
    res = stats.permutation_test(score, len(preds), 1000, seed=10)
    rng = np.random.default_rng(10)
    actual = score(np.arange(len(preds)))
    a = sum(score(rng.permutation(len(preds))) >= actual for _ in range(1000))
    formula_ok = res.p_value == (a + 1) / 1001

    rng = np.random.default_rng(11)
    ps = []
    for run in range(200):
        p_, e_ = _null_run(rng, model)
        ps.append(stats.permutation_test(stats.pairing_score(p_, e_), 10, 1000, seed=run).p_value)
    ks = sps.kstest(ps, "uniform").statistic
    ok = locked.p_value <= 5 / 1001 and ks < 0.15 and formula_ok
    record(7, ok, f"phase-locked p = {locked.p_value * 1001:.0f}/1001 (<= 5/1001), null KS statistic "
                  f"{ks:.3f} over 200 runs (< 0.15), p == (A+1)/1001: {formula_ok}")


def test_08_kde_mode():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(5, 40))
        d = rng.lognormal(np.log(0.2), 0.35, n).clip(0.06, 1.0)
        worst = max(worst, abs(syllable_stats.syllable_mode(d) - kde_mode_bruteforce(d)))
    degenerate = syllable_stats.syllable_mode([0.2] * 50)
    ok = worst <= 0.01 + 1e-9 and degenerate == 1 / 0.2
    record(8, ok, f"max |mode - brute-force KDE| = {worst:.3f} Hz over 50 sets (<= 0.01), "
                  f"identical durations -> {degenerate!r} (exactly 5.0)")


HAND_BH = [
    ([0.01, 0.02, 0.03], [0.03 * 3 / 3, 0.03 * 3 / 3, 0.03 * 3 / 3]),
    ([0.5, 0.9], [0.9 * 2 / 2, 0.9 * 2 / 2]),
    ([0.04], [0.04 * 1 / 1]),
    ([0.001, 0.2, 0.013, 0.04, 0.041, 0.9, 0.3, 0.0005],
     [0.0005 * 8 / 1, 0.2 * 8 / 6, 0.013 * 8 / 3, 0.041 * 8 / 5, 0.041 * 8 / 5, 0.9 * 8 / 8,
      0.3 * 8 / 7, 0.0005 * 8 / 1]),
    ([0.05, 0.05, 0.01, 1.0, 0.3, 0.3],
     [0.05 * 6 / 3, 0.05 * 6 / 3, 0.01 * 6 / 1, 1.0 * 6 / 6, 0.3 * 6 / 5, 0.3 * 6 / 5]),
]


def test_09_fdr_exact():
    # hand rule: each p scaled by m / rank, then the running minimum from the top
    # rank down; for the first vector 0.01*3/1 = 0.03, 0.02*3/2 = 0.03, 0.03*3/3 = 0.03
    mismatches = sum(list(stats.fdr_correct(p)) != want for p, want in HAND_BH)
    record(9, mismatches == 0, f"{5 - mismatches}/5 vectors bit-exact against hand-computed BH values")


def test_10_corpus_dependent(tmp_path):
    manifest = os.environ.get("SYLRHYTHM_TIMIT_MANIFEST")
    if not manifest:
        ACCEPTANCE[10] = ("SKIP", "optional: set SYLRHYTHM_TIMIT_MANIFEST to a TIMIT-style manifest "
                                  "with syllable alignments")
        pytest.skip("no TIMIT-style corpus available")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"stages": {"trf": True, "seq": False, "permutation": False}}))
    assert main(["analyze", "--manifest", manifest, "--out", str(tmp_path), "--config", str(cfg)]) == 0
    assert main(["timedomain", "--manifest", manifest, "--out", str(tmp_path), "--config", str(cfg)]) == 0
    summary = json.loads((tmp_path / "analyze_report.json").read_text())
    td = json.loads((tmp_path / "timedomain_report.json").read_text())
    corpus = sorted(summary["corpora"])[0]
    mm = summary["corpora"][corpus]["mean_measures"]
    t = td["corpora"][corpus]["trf"]
    checks = {
        "articulation rate": (mm["articulation_rate"], abs(mm["articulation_rate"] - 4.89) <= 0.5),
        "narrowband M1": (mm["narrowband_m1"], abs(mm["narrowband_m1"] - 4.57) <= 1.0),
        "TRF r": (t["cv"]["mean_r"], abs(t["cv"]["mean_r"] - 0.36) <= 0.10),
        "trough ms": (t["trough_latency_ms"], 0 <= t["trough_latency_ms"] <= 60),
    }
    detail = ", ".join(f"{k} {v:.2f}" for k, (v, _) in checks.items())
    record(10, all(ok for _, ok in checks.values()), detail)


def test_11_duration_trend():
    sents, _ = synth.rate_corpus(n_speakers=20, seconds_per_speaker=1024, seed=0)
    feats = []
    for s in sents:
        e = s.envelope(200)
        feats.append(analysis.features_from_envelopes(EnvelopeSet(e[None, :], e, 200.0), s.annotation,
                                                      s.duration, s.sentence_id, s.speaker_id, "rate"))
    rows = analysis.duration_curve(analysis.group(feats, "speaker_id"),
                                   [2.0 ** k for k in range(2, 11)], draws=10, seed=0)
    sub = [r for r in rows if r["source"] == "subset"]
    rho = sps.spearmanr([r["duration_s"] for r in sub], [r["mean_r"] for r in sub]).statistic
    fit, status = analysis.fit_duration_curve(rows)
    d95 = fit.duration_at_95 if fit else None
    ok = rho > 0 and d95 is not None and np.isfinite(d95)
    curve = " ".join(f"{r['mean_r']:.2f}" for r in sub)
    record(11, ok, f"r(duration 4..1024 s) = [{curve}], Spearman {rho:.2f} (> 0), "
                   f"duration_at_95 = {d95 if d95 is None else round(d95, 1)} s (finite)")
