"""Synthetic corpora with known ground truth.

Every generator returns :class:`SynthSentence` objects whose ``modulator``
can be evaluated on any time grid: at 50 Hz for envelope-level oracles, at
200 Hz for modulation-spectrum checks, or at 16 kHz to amplitude-modulate a
white-noise carrier and produce audio.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import corpus_io
from .corpus_io import SentenceRecord, annotation_from_intervals, write_annotation
from .syllable_stats import ONSET_RATE, onset_sequence
from .trf import MAX_LAG, DecimatedEnvelope

AUDIO_RATE = 16000


def default_kernel(t):
    """Trough at 40 ms followed by a broader peak at 160 ms."""
    t = np.asarray(t, dtype=float)
    return np.exp(-((t - 0.16) / 0.06) ** 2) - 0.6 * np.exp(-((t - 0.04) / 0.025) ** 2)


def context_kernel(t):
    t = np.asarray(t, dtype=float)
    return np.exp(-((t - 0.06) / 0.04) ** 2)


def kernel_taps(kernel=default_kernel, rate=ONSET_RATE, max_lag=MAX_LAG):
    lags = np.arange(-max_lag, max_lag + 1)
    return lags / rate, kernel(lags / rate)


@dataclass
class SynthSentence:
    sentence_id: str
    speaker_id: str
    duration: float
    intervals: list
    modulator: Callable = field(repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def annotation(self):
        return annotation_from_intervals(self.intervals, self.duration)

    def onsets(self):
        return onset_sequence(self.annotation, self.duration)

    def envelope(self, rate=ONSET_RATE):
        n = int(np.ceil(self.duration * rate - 1e-9))
        return self.modulator(np.arange(n) / rate)


def _grid_onsets(rng, duration, ioi_range, rate=ONSET_RATE):
    """Onset times on the ``rate`` grid with uniform inter-onset intervals."""
    t = rng.uniform(0.1, 0.3)
    times = []
    while t < duration - 0.15:
        times.append(round(t * rate) / rate)
        t += rng.uniform(*ioi_range)
    return np.array(times)


def _intervals_from_onsets(times, duration):
    out = []
    for j, t in enumerate(times):
        end = times[j + 1] if j + 1 < len(times) else min(t + 0.12, duration)
        off = t + 0.8 * (end - t) if j + 1 < len(times) else end
        out.append((float(t), float(off), f"s{j}"))
    return out


def _kernel_sum(times, amps, kernel, baseline):
    def modulator(t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, baseline)
        for tj, aj in zip(times, amps):
            lo, hi = np.searchsorted(t, [tj - 0.5 - 1e-9, tj + 0.5 + 1e-9])
            out[lo:hi] += aj * kernel(t[lo:hi] - tj)
        return out
    return modulator


def _durations(rng, n, dur_range):
    # whole 50 Hz samples keep audio, envelope and onset lengths aligned
    return np.round(rng.uniform(*dur_range, size=n) * ONSET_RATE) / ONSET_RATE


def kernel_corpus(n_sentences=100, n_speakers=1, seed=0, dur_range=(2.0, 4.0),
                  ioi_range=(0.12, 0.4), kernel=default_kernel, baseline=1.0):
    """Envelopes that are exactly ``baseline + kernel * onsets``."""
    rng = np.random.default_rng(seed)
    out = []
    for i, d in enumerate(_durations(rng, n_sentences, dur_range)):
        times = _grid_onsets(rng, d, ioi_range)
        out.append(SynthSentence(f"k{i:04d}", f"spk{i % n_speakers:02d}", float(d),
                                 _intervals_from_onsets(times, d),
                                 _kernel_sum(times, np.ones(len(times)), kernel, baseline)))
    lags, taps = kernel_taps(kernel)
    truth = {"kind": "kernel_corpus", "seed": seed, "baseline": baseline,
             "kernel": {"lags_s": lags.tolist(), "taps": taps.tolist()},
             "trough_ms": float(lags[MAX_LAG:][np.argmin(taps[MAX_LAG:])] * 1000)}
    return out, truth


def context_corpus(n_sentences=120, n_speakers=1, seed=0, dur_range=(2.0, 3.0),
                   ioi_range=(0.1, 0.5), kernel=context_kernel, baseline=1.0):
    """Each onset's response amplitude encodes the preceding inter-onset interval.

    ``amplitude = (ioi - 0.2) / 0.2``; the first onset uses the time since
    the sentence start. No linear time-invariant filter can represent this.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i, d in enumerate(_durations(rng, n_sentences, dur_range)):
        times = _grid_onsets(rng, d, ioi_range)
        prev = np.diff(np.concatenate([[0.0], times]))
        amps = (prev - 0.2) / 0.2
        out.append(SynthSentence(f"c{i:04d}", f"spk{i % n_speakers:02d}", float(d),
                                 _intervals_from_onsets(times, d),
                                 _kernel_sum(times, amps, kernel, baseline),
                                 {"amplitudes": amps.tolist()}))
    truth = {"kind": "context_corpus", "seed": seed, "baseline": baseline,
             "amplitude_rule": "(previous_ioi_s - 0.2) / 0.2"}
    return out, truth


def _hann_bumps(starts, ends, amps):
    def modulator(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for a, b, g in zip(starts, ends, amps):
            lo, hi = np.searchsorted(t, [a, b])
            out[lo:hi] += g * np.sin(np.pi * (t[lo:hi] - a) / (b - a)) ** 2
        return out
    return modulator


def rate_corpus(n_speakers=20, seconds_per_speaker=256.0, seed=0, rate_range=(3.5, 6.5),
                dur_range=(2.0, 5.0), noise_level=0.8):
    """Speakers with distinct articulation rates plus sentence-level rhythmic noise.

    Each syllable is a raised-cosine power bump. Every sentence also carries
    one sinusoidal power component at a random 2-9 Hz frequency, so a single
    sentence's modulation peak is a poor rate estimate while averages over
    many sentences track the speaker's rate.
    """
    rng = np.random.default_rng(seed)
    rates = rng.uniform(*rate_range, size=n_speakers)
    out = []
    for s, rate in enumerate(rates):
        total, i = 0.0, 0
        while total < seconds_per_speaker:
            d = float(_durations(rng, 1, dur_range)[0])
            t = rng.uniform(0.05, 0.2)
            starts, ends = [], []
            while True:
                syl = (1.0 / rate) * rng.lognormal(0.0, 0.25)
                if t + syl > d - 0.05:
                    break
                starts.append(t)
                ends.append(t + syl)
                t += syl + (rng.uniform(0.1, 0.4) if rng.random() < 0.1 else 0.0)
            if len(starts) < 2:
                continue
            amps = rng.uniform(0.5, 1.5, size=len(starts))
            bumps = _hann_bumps(starts, ends, amps)
            f_noise = rng.uniform(2.0, 9.0)
            a_noise = noise_level * rng.uniform(0.3, 1.0)
            phase = rng.uniform(0, 2 * np.pi)

            def modulator(tt, bumps=bumps, f=f_noise, a=a_noise, ph=phase):
                # power = bumps + sinusoid; the amplitude envelope is its square root
                power = 0.05 + bumps(tt) + a * 0.5 * (1 + np.cos(2 * np.pi * f * np.asarray(tt) + ph))
                return np.sqrt(power)

            intervals = [(float(a), float(b), f"s{j}") for j, (a, b) in enumerate(zip(starts, ends))]
            out.append(SynthSentence(f"r{s:02d}_{i:04d}", f"spk{s:02d}", d, intervals, modulator,
                                     {"noise_hz": f_noise}))
            total += d
            i += 1
    truth = {"kind": "rate_corpus", "seed": seed,
             "articulation_rates": {f"spk{s:02d}": float(r) for s, r in enumerate(rates)}}
    return out, truth


def envelope_pairs(sentences, snr_db=None, seed=0, rate=ONSET_RATE):
    """(OnsetSequence, DecimatedEnvelope) pairs from the modulators at ``rate``.

    With ``snr_db`` set, white noise is added per sentence so that the
    pooled signal-to-noise variance ratio equals the requested value.
    """
    rng = np.random.default_rng(seed)
    envs = [s.envelope(rate) for s in sentences]
    if snr_db is not None:
        pooled = np.concatenate(envs)
        sd = np.sqrt(np.var(pooled) / 10 ** (snr_db / 10))
        envs = [e + sd * rng.standard_normal(len(e)) for e in envs]
    return [(s.onsets(), DecimatedEnvelope(e, s.sentence_id)) for s, e in zip(sentences, envs)]


def am_noise(freq=4.0, duration=10.0, depth=1.0, seed=0, rate=AUDIO_RATE):
    """White noise amplitude-modulated by ``1 + depth * cos(2 pi f t)``."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    x = rng.standard_normal(n) * (1 + depth * np.cos(2 * np.pi * freq * t))
    return 0.9 * x / np.max(np.abs(x))


def render_audio(sentence, seed=0, rate=AUDIO_RATE):
    """White-noise carrier scaled by the sentence modulator (clipped at 0.02)."""
    rng = np.random.default_rng(seed)
    n = int(round(sentence.duration * rate))
    m = np.maximum(sentence.modulator(np.arange(n) / rate), 0.02)
    x = m * rng.standard_normal(n)
    return 0.9 * x / np.max(np.abs(x))


def write_corpus(out_dir, sentences, truth, corpus_id="synth", language="none",
                 style="synthetic", seed=0):
    """Write WAVs, TSV annotations, ``manifest.jsonl`` and ``truth.json``."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    records = []
    ss = np.random.SeedSequence(seed)
    for s, child in zip(sentences, ss.spawn(len(sentences))):
        wav = out / "audio" / f"{s.sentence_id}.wav"
        tsv = out / "annotations" / f"{s.sentence_id}.tsv"
        corpus_io.write_audio(wav, render_audio(s, seed=child))
        write_annotation(tsv, s.annotation)
        records.append(SentenceRecord(s.sentence_id, f"audio/{wav.name}", f"annotations/{tsv.name}",
                                      s.speaker_id, corpus_id, language, style, s.duration))
    corpus_io.write_manifest(out / "manifest.jsonl", records)
    truth = dict(truth, corpus_id=corpus_id, n_sentences=len(sentences),
                 sentences={s.sentence_id: {"speaker_id": s.speaker_id,
                                            "onsets_s": [iv[0] for iv in s.intervals], **s.meta}
                            for s in sentences})
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
    return out / "manifest.jsonl"


def write_am_noise(out_dir, freq=4.0, duration=10.0, seed=0, corpus_id="am_noise"):
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    sid = f"am_{freq:g}hz"
    corpus_io.write_audio(out / "audio" / f"{sid}.wav", am_noise(freq, duration, seed=seed))
    # one pseudo-syllable per modulation cycle, covering its louder half
    period = 1.0 / freq
    intervals = [(k * period, k * period + 0.5 * period, f"c{k}")
                 for k in range(int(duration * freq)) if k * period + 0.5 * period <= duration]
    write_annotation(out / "annotations" / f"{sid}.tsv", annotation_from_intervals(intervals, duration))
    rec = SentenceRecord(sid, f"audio/{sid}.wav", f"annotations/{sid}.tsv", "am", corpus_id,
                         "none", "synthetic", float(duration))
    corpus_io.write_manifest(out / "manifest.jsonl", [rec])
    with open(out / "truth.json", "w") as fh:
        json.dump({"kind": "am_noise", "freq_hz": freq, "duration_s": duration, "seed": seed,
                   "corpus_id": corpus_id}, fh, indent=1, sort_keys=True)
    return out / "manifest.jsonl"
