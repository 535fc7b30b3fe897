"""Modulation spectra and peak modulation frequency."""

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import DataError, NoPeakError

ENVELOPE_RATE = 200.0
PAD_DURATION = 20.0
PEAK_BAND = (1.0, 32.0)
DISPLAY_MAX_HZ = 32.0


@dataclass(frozen=True)
class ModulationSpectrum:
    amplitudes: np.ndarray
    bin_spacing: float
    kind: str = "broadband"
    normalized: bool = False

    def __post_init__(self):
        if self.kind not in ("broadband", "narrowband"):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")

    @property
    def frequencies(self):
        return np.arange(len(self.amplitudes)) * self.bin_spacing

    def normalize(self, f_max=DISPLAY_MAX_HZ):
        """Scale to unit root-sum-square over (0, f_max] Hz."""
        f = self.frequencies
        sel = (f > 0) & (f <= f_max + 1e-9 * self.bin_spacing)
        norm = np.sqrt(np.sum(self.amplitudes[sel] ** 2))
        if norm == 0:
            raise NoPeakError("cannot normalize a spectrum that is zero over the display band")
        return replace(self, amplitudes=self.amplitudes / norm, normalized=True)

    def to_csv(self, path, f_max=DISPLAY_MAX_HZ):
        f = self.frequencies
        sel = f <= f_max + 1e-9
        np.savetxt(path, np.column_stack([f[sel], self.amplitudes[sel]]), delimiter=",",
                   header="freq_hz,amplitude", comments="", fmt="%.10g")


@dataclass(frozen=True)
class PeakFrequency:
    value: float
    method: int
    kind: str
    n_used: int = 1
    n_excluded: int = 0


def _n_fft(pad_duration, rate):
    n = int(round(pad_duration * rate))
    if abs(n - pad_duration * rate) > 1e-6:
        raise DataError(f"pad duration {pad_duration} s is not a whole number of samples at {rate} Hz")
    return n


def modulation_spectrum(env, pad_duration=PAD_DURATION, rate=ENVELOPE_RATE, kind="broadband"):
    """Magnitude of the DFT of the squared envelope, zero-padded to ``pad_duration``.

    Bins run from 0 Hz to the Nyquist frequency of ``rate`` with spacing
    ``1 / pad_duration``. The DFT is unnormalized (``numpy.fft`` convention).
    """
    env = np.asarray(env, dtype=np.float64)
    n_fft = _n_fft(pad_duration, rate)
    if env.shape[-1] > n_fft:
        raise DataError(f"envelope is {env.shape[-1] / rate:.3f} s, longer than the "
                        f"{pad_duration:g} s padding window")
    amps = np.abs(np.fft.rfft(env ** 2, n=n_fft, axis=-1))
    return ModulationSpectrum(amps, 1.0 / pad_duration, kind)


def narrowband_spectrum(envs, pad_duration=PAD_DURATION):
    """Per-bin RMS over the modulation spectra of every narrowband envelope."""
    per_band = modulation_spectrum(envs.narrowband, pad_duration, envs.rate).amplitudes
    rms = np.sqrt(np.mean(per_band ** 2, axis=0))
    return ModulationSpectrum(rms, 1.0 / pad_duration, "narrowband")


def broadband_spectrum(envs, pad_duration=PAD_DURATION):
    return modulation_spectrum(envs.broadband, pad_duration, envs.rate, "broadband")


def pool_rms(spectra):
    """Per-bin RMS across spectra sharing one frequency grid."""
    spectra = list(spectra)
    if not spectra:
        raise DataError("no spectra to pool")
    first = spectra[0]
    if any(len(s.amplitudes) != len(first.amplitudes) or s.bin_spacing != first.bin_spacing
           for s in spectra):
        raise DataError("spectra to pool must share a frequency grid")
    amps = np.sqrt(np.mean(np.stack([s.amplitudes for s in spectra]) ** 2, axis=0))
    return ModulationSpectrum(amps, first.bin_spacing, first.kind)


def _band_slice(s, band):
    f_min, f_max = band
    lo = int(np.ceil(f_min / s.bin_spacing - 1e-9))
    hi = int(np.floor(f_max / s.bin_spacing + 1e-9))
    hi = min(hi, len(s.amplitudes) - 1)
    if lo > hi:
        raise DataError(f"no spectral bin inside band {band}")
    return lo, hi


def remove_one_over_f(s, band=PEAK_BAND):
    """Divide amplitudes by a power law ``c / f**beta`` fitted over ``band``.

    The fit is ordinary least squares in log-log coordinates over bins with
    positive amplitude. Bins outside the band are returned unchanged except
    DC, which is set to zero.
    """
    lo, hi = _band_slice(s, band)
    f = s.frequencies
    idx = np.arange(max(lo, 1), hi + 1)
    idx = idx[s.amplitudes[idx] > 0]
    if len(idx) < 2:
        raise NoPeakError("not enough positive bins to fit a 1/f trend")
    slope, intercept = np.polyfit(np.log(f[idx]), np.log(s.amplitudes[idx]), 1)
    trend = np.ones_like(s.amplitudes)
    trend[1:] = np.exp(intercept + slope * np.log(f[1:]))
    amps = s.amplitudes / trend
    amps[0] = 0.0
    return replace(s, amplitudes=amps)


def find_peak(s, band=PEAK_BAND, detrend=False):
    """Frequency of the largest amplitude inside ``band`` (inclusive).

    Ties resolve to the lowest frequency. Raises :class:`NoPeakError` when
    the band is identically zero.
    """
    if detrend:
        s = remove_one_over_f(s, band)
    lo, hi = _band_slice(s, band)
    seg = s.amplitudes[lo:hi + 1]
    if not np.any(seg > 0):
        raise NoPeakError(f"spectrum is zero inside {band[0]:g}-{band[1]:g} Hz")
    return (lo + int(np.argmax(seg))) * s.bin_spacing


def peak_method1(spectra, band=PEAK_BAND, detrend=False):
    """Average of the per-sentence peak frequencies.

    Sentences whose spectrum has no peak are skipped and counted in
    ``n_excluded``.
    """
    spectra = list(spectra)
    peaks = []
    for s in spectra:
        try:
            peaks.append(find_peak(s, band, detrend))
        except NoPeakError:
            continue
    if not peaks:
        raise NoPeakError(f"none of {len(spectra)} sentences has a modulation peak")
    kind = spectra[0].kind
    return PeakFrequency(float(np.mean(peaks)), 1, kind, len(peaks), len(spectra) - len(peaks))


def peak_method2(spectra, band=PEAK_BAND, detrend=False):
    """Peak of the RMS-pooled spectrum across sentences."""
    spectra = list(spectra)
    pooled = pool_rms(spectra)
    return PeakFrequency(float(find_peak(pooled, band, detrend)), 2, pooled.kind, len(spectra), 0)


def time_scale(env, alpha, max_denominator=64):
    """Resample an envelope so that ``out(t) = env(alpha * t)`` on the same grid.

    ``alpha > 1`` compresses time (every modulation frequency is multiplied by
    ``alpha``); ``alpha < 1`` expands it.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    ratio = Fraction(alpha).limit_denominator(max_denominator)
    # output length = N / alpha  ->  up = denominator, down = numerator
    return signal.resample_poly(np.asarray(env, dtype=np.float64), ratio.denominator, ratio.numerator)
