"""Auditory envelope extraction.

Each band is gammatone filtered (zero phase), half-wave rectified, low-pass
smoothed and decimated. The broadband envelope is the mean over bands.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import ConfigError, DataError

MIN_DURATION = 0.05

# Smoothing targets for the forward-backward (squared magnitude) response.
SMOOTH_CUTOFF_HZ = 64.0
SMOOTH_ORDER = 8


@dataclass(frozen=True)
class FilterbankSpec:
    n_bands: int = 128
    f_lo: float = 180.0
    f_hi: float = 7000.0
    envelope_rate: int = 200

    def validate(self, sample_rate=None):
        if self.n_bands < 2:
            raise ConfigError(f"n_bands must be >= 2, got {self.n_bands}")
        if not 0 < self.f_lo < self.f_hi:
            raise ConfigError(f"need 0 < f_lo < f_hi, got {self.f_lo}, {self.f_hi}")
        if self.envelope_rate <= 0:
            raise ConfigError("envelope_rate must be positive")
        if sample_rate is not None:
            if self.f_hi >= sample_rate / 2:
                raise ConfigError(f"f_hi {self.f_hi} Hz is not below Nyquist of {sample_rate} Hz")
            if sample_rate % self.envelope_rate:
                raise ConfigError(f"envelope rate {self.envelope_rate} does not divide "
                                  f"sample rate {sample_rate}")
        return self


@dataclass(frozen=True)
class EnvelopeSet:
    narrowband: np.ndarray   # (n_bands, T)
    broadband: np.ndarray    # (T,)
    rate: float

    @property
    def n_samples(self):
        return self.broadband.shape[0]

    def to_csv(self, path):
        t = np.arange(self.n_samples) / self.rate
        cols = np.column_stack([t, self.broadband, self.narrowband.T])
        header = ",".join(["time_s", "broadband"] + [f"band_{k:03d}" for k in range(len(self.narrowband))])
        np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.9g")


def band_centers(spec=FilterbankSpec()):
    """Logarithmically spaced centre frequencies from ``f_lo`` to ``f_hi``."""
    spec.validate()
    k = np.arange(spec.n_bands)
    return spec.f_lo * (spec.f_hi / spec.f_lo) ** (k / (spec.n_bands - 1))


@lru_cache(maxsize=8)
def _gammatone_bank(spec, sample_rate):
    bank = []
    for fc in band_centers(spec):
        b, a = signal.gammatone(fc, "iir", fs=sample_rate)
        bank.append(signal.tf2sos(b, a))
    return tuple(bank)


def smoothing_cutoff(cutoff=SMOOTH_CUTOFF_HZ, order=SMOOTH_ORDER):
    """Single-pass Butterworth cutoff giving -3 dB at ``cutoff`` after filtfilt."""
    # filtfilt squares |H|: one pass must sit at -1.5 dB at the target frequency
    return cutoff / (10 ** 0.15 - 1) ** (1.0 / (2 * order))


@lru_cache(maxsize=8)
def _smoothing_sos(sample_rate):
    return signal.butter(SMOOTH_ORDER, smoothing_cutoff(), fs=sample_rate, output="sos")


def _zero_phase(sos, x):
    padlen = min(3 * (2 * len(sos) + 1), x.shape[-1] - 1)
    return signal.sosfiltfilt(sos, x, padlen=padlen)


def extract_envelopes(w, spec=FilterbankSpec()):
    """Compute narrowband and broadband envelopes of a waveform.

    Parameters
    ----------
    w : Waveform
        Mono input, normally at 16 kHz.
    spec : FilterbankSpec

    Returns
    -------
    EnvelopeSet
        ``ceil(duration * envelope_rate)`` samples per band.
    """
    fs = int(w.sample_rate)
    spec.validate(fs)
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < MIN_DURATION * fs:
        raise DataError(f"waveform is {len(x) / fs * 1e3:.1f} ms long; need at least "
                        f"{MIN_DURATION * 1e3:.0f} ms")
    step = fs // spec.envelope_rate
    smooth = _smoothing_sos(fs)
    n_out = -(-len(x) // step)
    narrow = np.empty((spec.n_bands, n_out))
    for k, sos in enumerate(_gammatone_bank(spec, fs)):
        band = np.maximum(_zero_phase(sos, x), 0.0)
        env = _zero_phase(smooth, band)[::step]
        # the smoother can ring slightly below zero near sharp onsets
        narrow[k] = np.maximum(env, 0.0)
    broad = narrow.mean(axis=0)
    return EnvelopeSet(narrow, broad, float(spec.envelope_rate))
