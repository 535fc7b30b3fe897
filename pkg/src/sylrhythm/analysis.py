"""Corpus-level orchestration behind the ``analyze`` and ``timedomain`` commands."""

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import modspec, seq2seq, stats, syllable_stats, trf
from .corpus_io import load_annotation, load_manifest, read_audio
from .envelope import extract_envelopes
from .errors import DataError, NoPeakError, SylRhythmError

log = logging.getLogger(__name__)

MEASURES = ("syllable_mode", "syllable_rate", "articulation_rate",
            "broadband_m1", "broadband_m2", "narrowband_m1", "narrowband_m2")


@dataclass
class SentenceFeatures:
    sentence_id: str
    speaker_id: str
    corpus_id: str
    duration: float
    syllable_durations: np.ndarray
    broadband: modspec.ModulationSpectrum
    narrowband: modspec.ModulationSpectrum
    peak_bb: float
    peak_nb: float
    onsets: np.ndarray = None
    env50: np.ndarray = None

    @property
    def n_syllables(self):
        return len(self.syllable_durations)

    @property
    def syllable_time(self):
        return float(self.syllable_durations.sum())


def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _truncate(s, f_max):
    k = int(math.floor(f_max / s.bin_spacing + 1e-9)) + 1
    return modspec.ModulationSpectrum(s.amplitudes[:k].copy(), s.bin_spacing, s.kind)


def _peak_or_nan(s, band, detrend):
    try:
        return modspec.find_peak(s, band, detrend)
    except NoPeakError:
        return float("nan")


def features_from_envelopes(envs, annotation, duration, sentence_id="", speaker_id="",
                            corpus_id="", pad_duration=20.0, peak_band=(1.0, 32.0),
                            detrend=False, keep_max_hz=32.0):
    """Per-sentence spectra, peaks, syllable durations and 50 Hz sequences."""
    bb = _truncate(modspec.broadband_spectrum(envs, pad_duration), max(keep_max_hz, peak_band[1]))
    nb = _truncate(modspec.narrowband_spectrum(envs, pad_duration), max(keep_max_hz, peak_band[1]))
    onsets = syllable_stats.onset_sequence(annotation, duration).bits
    env50 = trf.decimate_envelope(envs.broadband, sentence_id, rate=envs.rate).values
    n = min(len(onsets), len(env50))
    return SentenceFeatures(sentence_id, speaker_id, corpus_id, duration, annotation.durations,
                            bb, nb, _peak_or_nan(bb, peak_band, detrend),
                            _peak_or_nan(nb, peak_band, detrend), onsets[:n], env50[:n])


def _sentence_job(args):
    rec, cfg = args
    try:
        w = read_audio(rec.audio_path)
        annotation = load_annotation(rec.annotation_path, rec.duration)
        envs = extract_envelopes(w, cfg.filterbank_spec())
        return features_from_envelopes(envs, annotation, w.duration, rec.sentence_id,
                                       rec.speaker_id, rec.corpus_id, cfg.pad_duration,
                                       tuple(cfg.peak_band), cfg.detrend_1f)
    except SylRhythmError as exc:
        raise type(exc)(f"sentence {rec.sentence_id!r} (speaker {rec.speaker_id!r}, "
                        f"corpus {rec.corpus_id!r}): {exc}") from None


def compute_features(records, cfg):
    jobs = cfg.resolved_jobs()
    args = [(r, cfg) for r in records]
    if jobs <= 1 or len(records) < 2:
        return [_sentence_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sentence_job, args, chunksize=max(1, len(args) // (4 * jobs))))


def _load(cfg):
    records = load_manifest(cfg.manifest)
    if not records:
        raise DataError(f"manifest {cfg.manifest} contains no usable sentences")
    return records


def group(features, key):
    out = {}
    for f in features:
        out.setdefault(getattr(f, key), []).append(f)
    return out


# --------------------------------------------------------------------------
# frequency domain

def speaker_measures(feats, cfg):
    """Rates and both peak methods for one speaker's sentences."""
    band, detrend = tuple(cfg.peak_band), cfg.detrend_1f
    count = sum(f.n_syllables for f in feats)
    total = sum(f.duration for f in feats)
    syl_time = sum(f.syllable_time for f in feats)
    durs = np.concatenate([f.syllable_durations for f in feats])
    out = {"syllable_rate": count / total if count else float("nan"),
           "articulation_rate": count / syl_time if syl_time > 0 else float("nan"),
           "syllable_mode": (syllable_stats.syllable_mode(durs, tuple(cfg.kde_grid))
                             if len(durs) >= 2 else float("nan"))}
    excluded = {}
    for kind, attr in (("broadband", "broadband"), ("narrowband", "narrowband")):
        spectra = [getattr(f, attr) for f in feats]
        try:
            m1 = modspec.peak_method1(spectra, band, detrend)
            out[f"{kind}_m1"] = m1.value
            excluded[kind] = m1.n_excluded
        except NoPeakError:
            out[f"{kind}_m1"] = float("nan")
            excluded[kind] = len(spectra)
        try:
            out[f"{kind}_m2"] = modspec.peak_method2(spectra, band, detrend).value
        except NoPeakError:
            out[f"{kind}_m2"] = float("nan")
    return out, excluded


def _pooled_mode(feats, cfg):
    """Syllable mode over every syllable of a corpus (speakers pooled)."""
    durs = np.concatenate([f.syllable_durations for f in feats])
    return syllable_stats.syllable_mode(durs, tuple(cfg.kde_grid)) if len(durs) >= 2 else float("nan")


def _corr_or_nan(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return stats.pearson(x, y)


def subset_measures(feats, idx):
    """Broadband Method-1 peak and articulation rate over a sentence subset."""
    peaks = [feats[i].peak_bb for i in idx if np.isfinite(feats[i].peak_bb)]
    syl = sum(feats[i].n_syllables for i in idx)
    t = sum(feats[i].syllable_time for i in idx)
    peak = float(np.mean(peaks)) if peaks else float("nan")
    return peak, (syl / t if t > 0 else float("nan"))


def duration_curve(by_speaker, grid, draws=10, seed=0):
    """Across-speaker r(peak, articulation rate) versus recording duration.

    For each target duration every speaker with enough material contributes
    a random subset; the correlation is averaged over ``draws`` repetitions.
    The final row uses each speaker's whole recording.
    """
    speakers = sorted(by_speaker)
    rows = []
    for gi, target in enumerate(grid):
        rs, n_spk = [], 0
        for draw in range(draws):
            peaks, rates = [], []
            for si, spk in enumerate(speakers):
                feats = by_speaker[spk]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", stats.SubsetWarning)
                    idx = stats.duration_subsets([f.duration for f in feats], target,
                                                 seed=_seed(seed, gi, draw, si))
                if idx is None:
                    continue
                p, a = subset_measures(feats, idx)
                peaks.append(p)
                rates.append(a)
            n_spk = len(peaks)
            r = _corr_or_nan(peaks, rates)
            if np.isfinite(r):
                rs.append(r)
        rows.append({"duration_s": float(target), "mean_r": float(np.mean(rs)) if rs else float("nan"),
                     "sd_r": float(np.std(rs)) if rs else float("nan"), "n_draws": len(rs),
                     "n_speakers": n_spk, "source": "subset"})
    peaks, rates, totals = [], [], []
    for spk in speakers:
        feats = by_speaker[spk]
        p, a = subset_measures(feats, range(len(feats)))
        peaks.append(p)
        rates.append(a)
        totals.append(sum(f.duration for f in feats))
    rows.append({"duration_s": float(np.mean(totals)), "mean_r": _corr_or_nan(peaks, rates),
                 "sd_r": 0.0, "n_draws": 1, "n_speakers": len(speakers), "source": "whole"})
    return rows


def fit_duration_curve(rows):
    pts = [(r["duration_s"], r["mean_r"]) for r in rows
           if r["source"] == "subset" and np.isfinite(r["mean_r"])]
    if len({d for d, _ in pts}) < 4:
        return None, "too few finite points"
    try:
        return stats.fit_sigmoid([d for d, _ in pts], [r for _, r in pts]), "ok"
    except SylRhythmError as exc:
        return None, str(exc)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _provenance(cfg):
    return {"config": cfg.to_dict(), "toolkit": "sylrhythm", "version": __version__}


ANALYZE_CSVS = ("pooled_spectra.csv", "speaker_scatter.csv", "correlation_matrix.csv",
                "duration_curve.csv", "sigmoid_fit.csv")


def run_analyze(cfg, features=None):
    """Frequency-domain analysis; writes per-speaker JSON and five CSV tables."""
    if features is None:
        features = compute_features(_load(cfg), cfg)
    if not features:
        raise DataError("no sentences to analyze")
    out = Path(cfg.out)
    by_corpus = group(features, "corpus_id")

    speaker_reports, scatter, spectra_rows, corr_rows, curve_rows, sig_rows = [], [], [], [], [], []
    per_corpus_r, corpus_weight, corpus_means = {}, {}, {}
    for ci, corpus in enumerate(sorted(by_corpus)):
        feats = by_corpus[corpus]
        by_spk = group(feats, "speaker_id")
        table = {}
        for spk in sorted(by_spk):
            sf = by_spk[spk]
            m, excluded = speaker_measures(sf, cfg)
            table[spk] = m
            total = sum(f.duration for f in sf)
            speaker_reports.append({
                "corpus_id": corpus, "speaker_id": spk, "n_sentences": len(sf),
                "total_duration_s": total,
                "rates": {k: m[k] for k in ("syllable_rate", "articulation_rate", "syllable_mode")},
                "peaks": {kind: {"method1": m[f"{kind}_m1"], "method2": m[f"{kind}_m2"]}
                          for kind in ("broadband", "narrowband")},
                "excluded_sentences": excluded,
                "peak_search": {"band_hz": list(cfg.peak_band), "detrend_1f": cfg.detrend_1f},
                **_provenance(cfg)})
            scatter.append({"corpus_id": corpus, "speaker_id": spk, "duration_s": total, **m})

        pooled_bb = modspec.pool_rms([f.broadband for f in feats]).normalize()
        pooled_nb = modspec.pool_rms([f.narrowband for f in feats]).normalize()
        fr = pooled_bb.frequencies
        for k in range(1, len(fr)):
            if fr[k] > 32.0 + 1e-9:
                break
            spectra_rows.append({"corpus_id": corpus, "freq_hz": round(float(fr[k]), 6),
                                 "broadband": pooled_bb.amplitudes[k],
                                 "narrowband": pooled_nb.amplitudes[k]})

        corpus_weight[corpus] = sum(f.duration for f in feats)
        per_corpus_r[corpus] = {}
        corpus_means[corpus] = {m: float(np.nanmean([table[s][m] for s in table]))
                                if any(np.isfinite(table[s][m]) for s in table) else float("nan")
                                for m in MEASURES}
        for i, a in enumerate(MEASURES):
            for b in MEASURES[i + 1:]:
                r = _corr_or_nan([table[s][a] for s in sorted(table)], [table[s][b] for s in sorted(table)])
                per_corpus_r[corpus][(a, b)] = r
                corr_rows.append({"scope": corpus, "measure_a": a, "measure_b": b, "r": r,
                                  "mean_diff": corpus_means[corpus][a] - corpus_means[corpus][b],
                                  "weight_s": corpus_weight[corpus]})

        rows = duration_curve(by_spk, cfg.duration_grid, cfg.subset_draws, _seed(cfg.seed, ci, 4))
        for r in rows:
            curve_rows.append({"corpus_id": corpus, **r})
        fit, status = fit_duration_curve(rows)
        d = fit.to_dict() if fit else {k: float("nan") for k in
                                       ("floor", "ceiling", "center_log2_s", "slope", "residual")}
        sig_rows.append({"corpus_id": corpus, "floor": d["floor"], "ceiling": d["ceiling"],
                         "center_log2_s": d["center_log2_s"], "slope": d["slope"],
                         "duration_at_95_s": (d.get("duration_at_95") if fit and d.get("duration_at_95")
                                              else float("nan")),
                         "residual": d["residual"], "degenerate": bool(fit.degenerate) if fit else False,
                         "status": status})

    for i, a in enumerate(MEASURES):
        for b in MEASURES[i + 1:]:
            rs = [(per_corpus_r[c][(a, b)], corpus_weight[c]) for c in sorted(per_corpus_r)
                  if np.isfinite(per_corpus_r[c][(a, b)])]
            diffs = [corpus_means[c][a] - corpus_means[c][b] for c in sorted(corpus_means)]
            diffs = [v for v in diffs if np.isfinite(v)]
            corr_rows.append({
                "scope": "weighted_mean", "measure_a": a, "measure_b": b,
                "r": stats.weighted_mean_correlation([r for r, _ in rs], [w for _, w in rs]) if rs else float("nan"),
                "mean_diff": float(np.mean(diffs)) if diffs else float("nan"),
                "weight_s": float(sum(w for _, w in rs))})

    (out / "speakers").mkdir(parents=True, exist_ok=True)
    for rep in speaker_reports:
        _write_json(out / "speakers" / f"{rep['corpus_id']}__{rep['speaker_id']}.json", rep)
    _write_csv(out / "pooled_spectra.csv", ["corpus_id", "freq_hz", "broadband", "narrowband"], spectra_rows)
    _write_csv(out / "speaker_scatter.csv", ["corpus_id", "speaker_id", "duration_s", *MEASURES], scatter)
    _write_csv(out / "correlation_matrix.csv",
               ["scope", "measure_a", "measure_b", "r", "mean_diff", "weight_s"], corr_rows)
    _write_csv(out / "duration_curve.csv",
               ["corpus_id", "duration_s", "mean_r", "sd_r", "n_draws", "n_speakers", "source"], curve_rows)
    _write_csv(out / "sigmoid_fit.csv",
               ["corpus_id", "floor", "ceiling", "center_log2_s", "slope", "duration_at_95_s",
                "residual", "degenerate", "status"], sig_rows)
    summary = {"command": "analyze", "n_sentences": len(features),
               "corpora": {c: {"n_sentences": len(by_corpus[c]),
                               "n_speakers": len(group(by_corpus[c], "speaker_id")),
                               "total_duration_s": corpus_weight[c],
                               "mean_measures": corpus_means[c],
                               "pooled_syllable_mode": _pooled_mode(by_corpus[c], cfg)}
                           for c in sorted(by_corpus)},
               "artifacts": {"speakers": sorted(f"speakers/{r['corpus_id']}__{r['speaker_id']}.json"
                                                for r in speaker_reports),
                             "csv": list(ANALYZE_CSVS)},
               **_provenance(cfg)}
    _write_json(out / "analyze_report.json", summary)
    return summary


# --------------------------------------------------------------------------
# time domain

def _pairs(feats):
    return [(f.onsets, f.env50) for f in feats]


def run_timedomain(cfg, features=None, progress=None):
    """TRF and sequence-model analysis with permutation p-values."""
    if features is None:
        features = compute_features(_load(cfg), cfg)
    out = Path(cfg.out)
    by_corpus = group(features, "corpus_id")
    corpora = sorted(by_corpus)
    stages = cfg.stages
    seq_cfg = cfg.seq_config()

    trf_models, trf_cv, splits, seq_models, seq_hist, report = {}, {}, {}, {}, {}, {}
    for ci, c in enumerate(corpora):
        pairs = _pairs(by_corpus[c])
        entry = {"n_sentences": len(pairs), "n_samples": int(sum(len(o) for o, _ in pairs))}
        if stages.get("trf", True):
            cv = trf.cross_validated_power(pairs, cfg.folds, cfg.lambda_grid, _seed(cfg.seed, ci, 1),
                                           cfg.per_sentence_r)
            lam = float(np.median(cv.chosen_lambda))
            model = trf.fit_trf(pairs, lam)
            trough = trf.trough_latency(model)
            trf_models[c], trf_cv[c] = model, cv
            entry["trf"] = {"cv": cv.to_dict(), "lambda": lam,
                            "trough_latency_ms": trough.latency_ms,
                            "trough_is_local_minimum": trough.local_minimum}
        if stages.get("seq", True):
            sp = seq2seq.split_sentences(range(len(pairs)), seed=_seed(cfg.seed, ci, 2))
            splits[c] = sp
            scfg = replace(seq_cfg, seed=_seed(cfg.seed, ci, 3) % (2 ** 31))
            m0 = seq2seq.init_model(scfg)
            best, hist = seq2seq.train(m0, [pairs[i] for i in sp.train], [pairs[i] for i in sp.val],
                                       scfg, progress=progress)
            seq_models[c], seq_hist[c] = best, hist
            ev = seq2seq.evaluate(best, [pairs[i] for i in sp.test])
            entry["seq"] = {"config": asdict(scfg), "best_epoch": hist.best_epoch,
                            "epochs_run": len(hist.epochs),
                            "split_sizes": {"train": len(sp.train), "val": len(sp.val), "test": len(sp.test)},
                            "test_r": ev.pooled_r, "test_r_undefined": ev.undefined}
        report[c] = entry

    rows = []
    for ei, e in enumerate(corpora):
        pairs = _pairs(by_corpus[e])
        envs = [y for _, y in pairs]
        cells = []
        if stages.get("trf", True):
            for t in corpora:
                if t == e:
                    r = trf_cv[e].mean_r
                    preds = trf_cv[e].predictions
                else:
                    preds = [trf.predict_envelope(trf_models[t], o) for o, _ in pairs]
                    r = _corr_or_nan(np.concatenate(preds), np.concatenate(envs))
                cells.append(("trf", t, r, preds, envs))
        if stages.get("seq", True):
            test = splits[e].test
            test_envs = [envs[i] for i in test]
            for t in corpora:
                preds = [seq2seq.forward(seq_models[t], pairs[i][0]) for i in test]
                r = _corr_or_nan(np.concatenate(preds), np.concatenate(test_envs))
                cells.append(("seq", t, r, preds, test_envs))
        pvals = []
        for k, (model, t, r, preds, cell_envs) in enumerate(cells):
            row = {"eval_corpus": e, "model": model, "trained_on": t, "r": r,
                   "perm_actual_r": float("nan"), "p_value": float("nan"), "p_fdr": float("nan")}
            if stages.get("permutation", True) and len(preds) >= 2:
                res = stats.permutation_test(stats.pairing_score(preds, cell_envs), len(preds),
                                             cfg.n_permutations, _seed(cfg.seed, ei, k, 5))
                row["perm_actual_r"], row["p_value"] = res.actual_r, res.p_value
                pvals.append(len(rows))
            rows.append(row)
        if pvals:
            adj = stats.fdr_correct([rows[i]["p_value"] for i in pvals])
            for i, a in zip(pvals, adj):
                rows[i]["p_fdr"] = float(a)

    out.mkdir(parents=True, exist_ok=True)
    tap_rows = []
    for c in sorted(trf_models):
        trf_models[c].save(out / f"trf_{c}.json")
        tap_rows += [{"corpus_id": c, "lag_s": round(float(l), 6), "tap": float(v)}
                     for l, v in zip(trf_models[c].lags_s, trf_models[c].taps)]
    if trf_models:
        _write_csv(out / "trf_taps.csv", ["corpus_id", "lag_s", "tap"], tap_rows)
    for c in sorted(seq_models):
        seq_models[c].save(out / f"seq_{c}")
        seq_hist[c].to_csv(out / f"seq_history_{c}.csv")
    _write_csv(out / "predictive_power.csv",
               ["eval_corpus", "model", "trained_on", "r", "perm_actual_r", "p_value", "p_fdr"], rows)
    summary = {"command": "timedomain", "corpora": report,
               "predictive_power": rows, **_provenance(cfg)}
    _write_json(out / "timedomain_report.json", summary)
    return summary
