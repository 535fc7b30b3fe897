"""Forward temporal response function from syllable onsets to the envelope.

The model is ``env(n) = intercept + sum_m taps[m] * onsets(n - m)`` with lags
of -0.5 to +0.5 s at 50 Hz, estimated by ridge regression on mean-centred
lagged designs. Lag windows never cross sentence boundaries.
"""

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import signal

from .errors import ConfigError, DataError
from .stats import pearson

TRF_RATE = 50
MAX_LAG = 25
LAMBDA_GRID = tuple(10.0 ** k for k in range(-2, 5))

_DECIM_FACTOR = 4
_DECIM_ORDER = 13


@dataclass(frozen=True)
class DecimatedEnvelope:
    values: np.ndarray
    sentence_id: str = ""

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class TRFModel:
    taps: np.ndarray
    intercept: float = 0.0
    lam: float = 0.0
    min_lag: int = -MAX_LAG
    rate: int = TRF_RATE

    def __post_init__(self):
        if not np.all(np.isfinite(self.taps)):
            raise DataError("TRF taps must be finite")

    @property
    def lags(self):
        return self.min_lag + np.arange(len(self.taps))

    @property
    def lags_s(self):
        return self.lags / self.rate

    def to_dict(self):
        return {"lags_s": [float(v) for v in self.lags_s],
                "taps": [float(v) for v in self.taps],
                "intercept": float(self.intercept),
                "lambda": float(self.lam)}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d, rate=TRF_RATE):
        lags = np.rint(np.asarray(d["lags_s"]) * rate).astype(int)
        return cls(np.asarray(d["taps"], dtype=float), float(d["intercept"]),
                   float(d["lambda"]), int(lags[0]), rate)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FitReport:
    fold_r: List[float]
    chosen_lambda: List[float]
    residual_variance: float
    r_squared: float
    predictions: list = field(default_factory=list, repr=False)

    @property
    def mean_r(self):
        return float(np.mean(self.fold_r))

    def to_dict(self):
        return {"fold_r": [float(r) for r in self.fold_r], "mean_r": self.mean_r,
                "chosen_lambda": [float(v) for v in self.chosen_lambda],
                "residual_variance": float(self.residual_variance),
                "r_squared": float(self.r_squared)}


@dataclass(frozen=True)
class Trough:
    latency_ms: float
    local_minimum: bool


def _values(x):
    if hasattr(x, "bits"):
        return np.asarray(x.bits, dtype=np.float64)
    if hasattr(x, "values"):
        return np.asarray(x.values, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def decimate_envelope(e, sentence_id="", rate=200):
    """Zero-phase low-pass (-3 dB at 20 Hz) and keep every 4th sample."""
    x = np.asarray(e, dtype=np.float64)
    # one pass at -1.5 dB so that the forward-backward response is -3 dB at 20 Hz
    fc = 20.0 / (10 ** 0.15 - 1) ** (1.0 / (2 * _DECIM_ORDER))
    sos = signal.butter(_DECIM_ORDER, fc, fs=rate, output="sos")
    padlen = min(3 * (2 * len(sos) + 1), len(x) - 1)
    if padlen < 0:
        raise DataError("cannot decimate an empty envelope")
    y = signal.sosfiltfilt(sos, x, padlen=padlen)
    return DecimatedEnvelope(y[::_DECIM_FACTOR], sentence_id)


def lag_matrix(onsets, min_lag=-MAX_LAG, max_lag=MAX_LAG):
    """Design with column j equal to ``onsets`` delayed by ``min_lag + j``."""
    s = _values(onsets)
    n = len(s)
    lags = np.arange(min_lag, max_lag + 1)
    X = np.zeros((n, len(lags)))
    for j, m in enumerate(lags):
        if abs(m) >= n:
            continue
        if m >= 0:
            X[m:, j] = s[:n - m]
        else:
            X[:n + m, j] = s[-m:]
    return X


class _Stats:
    """Running sums for centred ridge regression."""

    def __init__(self, p):
        self.n = 0
        self.sx = np.zeros(p)
        self.sy = 0.0
        self.sxx = np.zeros((p, p))
        self.sxy = np.zeros(p)

    @classmethod
    def of(cls, X, y):
        st = cls(X.shape[1])
        st.n = len(y)
        st.sx = X.sum(axis=0)
        st.sy = float(y.sum())
        st.sxx = X.T @ X
        st.sxy = X.T @ y
        return st

    def __iadd__(self, other):
        self.n += other.n
        self.sx = self.sx + other.sx
        self.sy += other.sy
        self.sxx = self.sxx + other.sxx
        self.sxy = self.sxy + other.sxy
        return self

    def centred(self):
        cxx = self.sxx - np.outer(self.sx, self.sx) / self.n
        cxy = self.sxy - self.sx * self.sy / self.n
        return cxx, cxy

    def solve(self, lam):
        cxx, cxy = self.centred()
        a = cxx + lam * np.eye(len(cxy))
        try:
            beta = np.linalg.solve(a, cxy)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(a, cxy, rcond=None)[0]
        intercept = (self.sy - self.sx @ beta) / self.n
        return beta, intercept


def _sentence_stats(pairs, min_lag, max_lag):
    out = []
    for onsets, env in pairs:
        s, y = _values(onsets), _values(env)
        if len(s) != len(y):
            raise DataError(f"onset sequence ({len(s)}) and envelope ({len(y)}) lengths differ")
        out.append(_Stats.of(lag_matrix(s, min_lag, max_lag), y))
    return out


def _pooled(stats, idx):
    acc = _Stats(len(stats[0].sx))
    for i in idx:
        acc += stats[i]
    return acc


def fit_trf(pairs, lam=0.0, min_lag=-MAX_LAG, max_lag=MAX_LAG):
    """Ridge estimate of the TRF over a list of (onsets, envelope) pairs.

    Minimises the squared error plus ``lam * ||taps||**2`` after mean
    centring; the intercept is recovered from the means.
    """
    if lam < 0:
        raise ConfigError(f"ridge lambda must be >= 0, got {lam}")
    pairs = list(pairs)
    if not pairs:
        raise DataError("fit_trf needs at least one sentence")
    stats = _sentence_stats(pairs, min_lag, max_lag)
    pooled = _pooled(stats, range(len(stats)))
    if pooled.n <= max_lag - min_lag + 1:
        raise DataError(f"{pooled.n} samples are too few for {max_lag - min_lag + 1} taps")
    beta, intercept = pooled.solve(lam)
    return TRFModel(beta, float(intercept), float(lam), min_lag)


def predict_envelope(model, onsets):
    """Convolve onsets with the taps; samples outside the sentence count as zero."""
    s = _values(onsets)
    full = np.convolve(s, model.taps)
    start = -model.min_lag
    out = full[start:start + len(s)]
    if len(out) < len(s):
        out = np.concatenate([out, np.zeros(len(s) - len(out))])
    return model.intercept + out


def pooled_r(model, pairs):
    """Pearson r between concatenated predictions and envelopes."""
    pred = np.concatenate([predict_envelope(model, o) for o, _ in pairs])
    env = np.concatenate([_values(e) for _, e in pairs])
    return pearson(pred, env)


def _score(preds, envs, per_sentence):
    if per_sentence:
        rs = [pearson(p, e) for p, e in zip(preds, envs) if np.ptp(p) > 0 and np.ptp(e) > 0]
        return float(np.mean(rs)) if rs else np.nan
    p, e = np.concatenate(preds), np.concatenate(envs)
    if np.ptp(p) == 0 or np.ptp(e) == 0:
        return np.nan
    return pearson(p, e)


def _predict_from(beta, intercept, min_lag, onsets):
    return predict_envelope(TRFModel(beta, intercept, 0.0, min_lag), onsets)


def cross_validated_power(pairs, folds=10, lambda_grid=LAMBDA_GRID, seed=0,
                          per_sentence=False, min_lag=-MAX_LAG, max_lag=MAX_LAG):
    """Sentence-level k-fold estimate of TRF predictive power.

    Within each training fold, lambda is chosen on a 90/10 split of the
    training sentences from ``lambda_grid`` times the mean design-column
    variance. The model is then refitted on the whole training fold and
    scored on the held-out sentences.

    Returns
    -------
    FitReport
        ``predictions`` holds the held-out prediction for every sentence in
        input order.
    """
    pairs = list(pairs)
    n = len(pairs)
    if n < folds:
        raise DataError(f"{folds}-fold cross-validation needs >= {folds} sentences, got {n}")
    stats = _sentence_stats(pairs, min_lag, max_lag)
    onsets = [_values(o) for o, _ in pairs]
    envs = [_values(e) for _, e in pairs]
    rng = np.random.default_rng(seed)
    fold_idx = np.array_split(rng.permutation(n), folds)

    fold_r, lambdas, resid, r2 = [], [], [], []
    predictions = [None] * n
    for k, test in enumerate(fold_idx):
        train = np.concatenate([f for j, f in enumerate(fold_idx) if j != k])
        inner = rng.permutation(train)
        n_val = max(1, int(round(0.1 * len(inner))))
        inner_val, inner_train = inner[:n_val], inner[n_val:]
        full = _pooled(stats, train)
        cxx, _ = full.centred()
        scale = float(np.mean(np.diag(cxx)) / full.n) or 1.0
        best_lam, best_r = None, -np.inf
        if len(lambda_grid) == 1 or len(inner_train) == 0:
            best_lam = float(lambda_grid[0]) * scale
        else:
            st = _pooled(stats, inner_train)
            for base in lambda_grid:
                lam = float(base) * scale
                beta, b0 = st.solve(lam)
                r = _score([_predict_from(beta, b0, min_lag, onsets[i]) for i in inner_val],
                           [envs[i] for i in inner_val], per_sentence)
                if np.isfinite(r) and r > best_r:
                    best_lam, best_r = lam, r
            if best_lam is None:
                best_lam = float(lambda_grid[0]) * scale
        beta, b0 = full.solve(best_lam)
        preds = [_predict_from(beta, b0, min_lag, onsets[i]) for i in test]
        for i, p in zip(test, preds):
            predictions[i] = p
        held = [envs[i] for i in test]
        r = _score(preds, held, per_sentence)
        y, p = np.concatenate(held), np.concatenate(preds)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        fold_r.append(r)
        lambdas.append(best_lam)
        resid.append(float(np.sum((y - p) ** 2)) / ss_tot if ss_tot > 0 else np.nan)
        r2.append(r * r)
    return FitReport(fold_r, lambdas, float(np.mean(resid)), float(np.mean(r2)), predictions)


def trough_latency(model, window_ms=(0.0, 250.0)):
    """Latency of the smallest tap within ``window_ms`` after the onset.

    ``local_minimum`` is False when the minimum sits on the window edge,
    i.e. the taps are monotone there.
    """
    lag_ms = model.lags * 1000.0 / model.rate
    sel = np.flatnonzero((lag_ms >= window_ms[0] - 1e-9) & (lag_ms <= window_ms[1] + 1e-9))
    if len(sel) == 0:
        raise DataError(f"no taps inside {window_ms} ms")
    j = int(np.argmin(model.taps[sel]))
    return Trough(float(lag_ms[sel[j]]), 0 < j < len(sel) - 1)
