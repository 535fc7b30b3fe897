"""Correlation, permutation significance, FDR, pooling and sigmoid fits."""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import ConvergenceError, DataError

N_PERMUTATIONS = 1000


class SubsetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PermutationResult:
    actual_r: float
    null_rs: np.ndarray
    p_value: float

    @property
    def exceed_count(self):
        return int(np.sum(self.null_rs >= self.actual_r))


@dataclass(frozen=True)
class SigmoidFit:
    floor: float
    ceiling: float
    center: float        # log2 seconds
    slope: float
    duration_at_95: Optional[float]
    residual: float
    degenerate: bool = False

    def __call__(self, durations):
        return sigmoid_curve(np.log2(np.asarray(durations, dtype=float)),
                             self.floor, self.ceiling, self.center, self.slope)

    def to_dict(self):
        return {"floor": self.floor, "ceiling": self.ceiling, "center_log2_s": self.center,
                "slope": self.slope, "duration_at_95": self.duration_at_95,
                "residual": self.residual, "degenerate": self.degenerate}


def pearson(x, y):
    """Sample Pearson correlation; raises on constant or too-short input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise DataError("pearson needs at least 3 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise DataError("pearson is undefined for a constant input")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def permutation_test(score_fn, n_sentences, n=N_PERMUTATIONS, seed=0):
    """Permutation significance of a pairing score.

    ``score_fn(pairing)`` receives an integer array where ``pairing[i]`` is
    the envelope index matched with onset sequence ``i``; the identity gives
    the actual score. Each repetition draws a uniform random permutation
    (fixed points allowed). ``p = (A + 1) / (n + 1)`` with ``A`` the number
    of null scores at or above the actual one.
    """
    if n_sentences < 2:
        raise DataError("permutation test needs at least 2 sentences")
    rng = np.random.default_rng(seed)
    actual = float(score_fn(np.arange(n_sentences)))
    null = np.array([score_fn(rng.permutation(n_sentences)) for _ in range(n)], dtype=float)
    a = int(np.sum(null >= actual))
    return PermutationResult(actual, null, (a + 1) / (n + 1))


def pairing_score(predictions, envelopes):
    """Score function for :func:`permutation_test` over precomputed predictions.

    Prediction ``i`` is compared with envelope ``pairing[i]``; both are cut
    to their common length before concatenation.
    """
    preds = [np.asarray(p, dtype=np.float64) for p in predictions]
    envs = [np.asarray(e, dtype=np.float64) for e in envelopes]

    def score(pairing):
        ps, es = [], []
        for i, j in enumerate(pairing):
            n = min(len(preds[i]), len(envs[j]))
            ps.append(preds[i][:n])
            es.append(envs[j][:n])
        p, e = np.concatenate(ps), np.concatenate(es)
        if np.ptp(p) == 0 or np.ptp(e) == 0:
            return 0.0
        return pearson(p, e)

    return score


def fdr_correct(p_values):
    """Benjamini-Hochberg adjusted p-values, in the input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if np.any((p <= 0) | (p > 1)):
        raise DataError("p-values must lie in (0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(ranked, 1.0)
    return out


def weighted_mean_correlation(rs, weights):
    rs = np.asarray(rs, dtype=float)
    w = np.asarray(weights, dtype=float)
    if rs.shape != w.shape:
        raise DataError("correlations and weights differ in length")
    if np.any(w <= 0):
        raise DataError("weights must be positive")
    return float(np.sum(w * rs) / np.sum(w))


def duration_subsets(durations, target, seed=0):
    """Random sentence subset whose cumulative duration first reaches ``target``.

    Returns the chosen indices in draw order, or ``None`` (with a
    :class:`SubsetWarning`) when the total duration falls short.
    """
    d = np.asarray(durations, dtype=float)
    total = float(d.sum())
    if total < target - 1e-9:
        warnings.warn(f"{total:.1f} s of material is below the {target:g} s target; excluded",
                      SubsetWarning, stacklevel=2)
        return None
    order = np.random.default_rng(seed).permutation(len(d))
    cum = np.cumsum(d[order])
    k = int(np.searchsorted(cum, target - 1e-9)) + 1
    return order[:min(k, len(d))]


def sigmoid_curve(log2d, a, b, c, s):
    return a + (b - a) / (1.0 + np.exp(-(log2d - c) / s))


def fit_sigmoid(durations, rs, n_starts=24, seed=0):
    """Least-squares logistic fit of ``r`` against log2 duration.

    Several starting points are tried and the lowest-residual solution is
    kept. ``duration_at_95`` is where the curve reaches 95% of the way from
    floor to ceiling.
    """
    d = np.asarray(durations, dtype=float)
    r = np.asarray(rs, dtype=float)
    keep = np.isfinite(d) & np.isfinite(r) & (d > 0)
    d, r = d[keep], r[keep]
    if len(np.unique(d)) < 4:
        raise DataError("sigmoid fit needs at least 4 distinct durations")
    x = np.log2(d)
    const_resid = float(np.sum((r - r.mean()) ** 2))
    span = float(np.ptp(r))
    if span < 1e-12:
        return SigmoidFit(float(r.mean()), float(r.mean()), float(np.median(x)), 1.0,
                          None, 0.0, degenerate=True)

    def resid(theta):
        a, b, c, s = theta
        return sigmoid_curve(x, a, b, c, s) - r

    rng = np.random.default_rng(seed)
    starts = [(r.min(), r.max(), float(np.median(x)), 1.0)]
    for _ in range(n_starts - 1):
        starts.append((r.min() + 0.2 * span * rng.standard_normal(),
                       r.max() + 0.2 * span * rng.standard_normal(),
                       rng.uniform(x.min(), x.max()),
                       float(np.exp(rng.uniform(np.log(0.1), np.log(4.0))))))
    best = None
    lower = [-np.inf, -np.inf, x.min() - 10.0, 1e-3]
    upper = [np.inf, np.inf, x.max() + 10.0, 50.0]
    for theta0 in starts:
        try:
            sol = optimize.least_squares(resid, theta0, bounds=(lower, upper),
                                         xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(sol.x)):
            continue
        cost = float(np.sum(sol.fun ** 2))
        if best is None or cost < best[1]:
            best = (sol.x, cost)
    if best is None:
        raise ConvergenceError(f"sigmoid fit failed from all {n_starts} starts "
                               f"(constant-model residual {const_resid:.3g})")
    a, b, c, s = (float(v) for v in best[0])
    if b < a:
        # same curve with floor and ceiling exchanged and the slope negated
        a, b, s = b, a, -s
    degenerate = (b - a) < 1e-6 * max(1.0, abs(a))
    d95 = None
    if s > 0 and not degenerate:
        d95 = float(2.0 ** (c + s * math.log(19.0)))
    return SigmoidFit(a, b, c, s, d95, best[1], degenerate)
