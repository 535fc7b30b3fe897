"""Multi-layer bidirectional LSTM mapping onset sequences to envelopes.

Pure numpy with explicit backpropagation through time. All parameters live
in one flat float64 vector; per-layer weight matrices are views into it,
which keeps the optimiser, gradient checks and serialisation simple.

Gate layout inside each ``W`` (rows) is input, forget, output, candidate.
``W`` has shape ``(4H, D + H)``: the first ``D`` columns act on the layer
input, the last ``H`` on the previous hidden state.
"""

import csv
import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .stats import pearson


@dataclass(frozen=True)
class SeqModelConfig:
    n_layers: int = 8
    hidden_size: int = 64
    bidirectional: bool = True
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    input_size: int = 1

    def validate(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.hidden_size < 1:
            raise ConfigError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.input_size < 1:
            raise ConfigError("input_size must be >= 1")
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("learning_rate, max_epochs and patience must be positive")
        return self

    @property
    def n_directions(self):
        return 2 if self.bidirectional else 1


def _layout(cfg):
    """Shapes of every parameter block in flat-vector order."""
    H, nd = cfg.hidden_size, cfg.n_directions
    shapes = []
    for layer in range(cfg.n_layers):
        d_in = cfg.input_size if layer == 0 else nd * H
        for _ in range(nd):
            shapes.append((4 * H, d_in + H))
            shapes.append((4 * H,))
    shapes.append((nd * H,))
    shapes.append(())
    return shapes


class SeqModel:
    """Weights plus the target affine used to de-normalise outputs."""

    def __init__(self, cfg, params=None, target_mean=0.0, target_std=1.0):
        self.cfg = cfg.validate()
        self.shapes = _layout(cfg)
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.n_params = int(sum(sizes))
        self.params = np.zeros(self.n_params) if params is None else np.asarray(params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise DataError(f"expected {self.n_params} parameters, got {self.params.shape}")
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.target_mean = float(target_mean)
        self.target_std = float(target_std)

    def views(self, flat=None):
        """Per-block views into ``flat`` (default: the parameter vector)."""
        flat = self.params if flat is None else flat
        return [flat[a:b].reshape(s) for a, b, s in zip(self._offsets[:-1], self._offsets[1:], self.shapes)]

    def cells(self, flat=None):
        """``cells[layer][direction] = (W, b)`` plus the output ``(w, b)``."""
        v = self.views(flat)
        nd = self.cfg.n_directions
        cells, k = [], 0
        for _ in range(self.cfg.n_layers):
            row = []
            for _ in range(nd):
                row.append((v[k], v[k + 1]))
                k += 2
            cells.append(row)
        return cells, (v[k], v[k + 1])

    def copy(self):
        return SeqModel(self.cfg, self.params.copy(), self.target_mean, self.target_std)

    def save(self, stem):
        """Write ``<stem>.json`` (config and shapes) and ``<stem>.bin`` (float64 LE)."""
        stem = Path(stem)
        header = {"config": asdict(self.cfg), "layer_shapes": [list(s) for s in self.shapes],
                  "n_params": self.n_params, "seed": self.cfg.seed,
                  "target_mean": self.target_mean, "target_std": self.target_std,
                  "dtype": "<f8", "weights_file": stem.name + ".bin"}
        with open(stem.with_suffix(".json"), "w") as fh:
            json.dump(header, fh, indent=2)
        self.params.astype("<f8").tofile(stem.with_suffix(".bin"))

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        with open(stem.with_suffix(".json")) as fh:
            header = json.load(fh)
        cfg = SeqModelConfig(**header["config"])
        params = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
        return cls(cfg, params, header["target_mean"], header["target_std"])


def init_model(cfg):
    """Uniform(+-1/sqrt(fan_in)) weights, forget-gate bias 1, seeded."""
    cfg.validate()
    model = SeqModel(cfg)
    rng = np.random.default_rng(cfg.seed)
    H = cfg.hidden_size
    cells, (w_out, b_out) = model.cells()
    for row in cells:
        for W, b in row:
            bound = 1.0 / np.sqrt(W.shape[1])
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
            b[H:2 * H] = 1.0
    bound = 1.0 / np.sqrt(w_out.shape[0])
    w_out[...] = rng.uniform(-bound, bound, w_out.shape)
    b_out[...] = rng.uniform(-bound, bound)
    return model


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _dsigmoid(s):
    """Derivative of the logistic expressed through its output."""
    return s * (1.0 - s)


def _run_direction(W, b, X, H):
    """One LSTM pass over ``X`` (T, D) in the given time order; returns cache."""
    T, D = X.shape
    Wx, Wh = W[:, :D], W[:, D:]
    Zx = X @ Wx.T + b
    hs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    gates = np.empty((T, 4, H))
    tcs = np.empty((T, H))
    for t in range(T):
        z = Zx[t] + Wh @ hs[t]
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        o = _sigmoid(z[2 * H:3 * H])
        g = np.tanh(z[3 * H:])
        c = f * cs[t] + i * g
        tc = np.tanh(c)
        cs[t + 1] = c
        hs[t + 1] = o * tc
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, o, g
        tcs[t] = tc
    return hs, cs, gates, tcs


def _back_direction(W, X, H, cache, dH):
    """BPTT for one direction. ``dH`` (T, H) is dLoss/dh from above."""
    hs, cs, gates, tcs = cache
    T, D = X.shape
    Wh = W[:, D:]
    dZ = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i, f, o, g = gates[t]
        dh = dH[t] + dh_next
        do = dh * tcs[t]
        dc = dh * o * (1.0 - tcs[t] ** 2) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * cs[t]
        dc_next = dc * f
        dz = dZ[t]
        dz[:H] = di * _dsigmoid(i)
        dz[H:2 * H] = df * _dsigmoid(f)
        dz[2 * H:3 * H] = do * _dsigmoid(o)
        dz[3 * H:] = dg * (1.0 - g * g)
        dh_next = Wh.T @ dz
    dW = np.empty_like(W)
    dW[:, :D] = dZ.T @ X
    dW[:, D:] = dZ.T @ hs[:-1]
    db = dZ.sum(axis=0)
    dX = dZ @ W[:, :D]
    return dW, db, dX


def _as_input(onsets, input_size=1):
    x = np.asarray(getattr(onsets, "bits", onsets), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 1:
        raise DataError("onset sequence must have at least one sample")
    if x.shape[1] != input_size:
        raise DataError(f"model expects {input_size} input feature(s), got {x.shape[1]}")
    return x


def _forward_raw(model, x, flat=None, keep=False):
    cfg = model.cfg
    H, nd = cfg.hidden_size, cfg.n_directions
    cells, (w_out, b_out) = model.cells(flat)
    inp = x
    caches = []
    for layer, row in enumerate(cells):
        outs, layer_cache = [], []
        for d, (W, b) in enumerate(row):
            xd = inp if d == 0 else inp[::-1]
            cache = _run_direction(W, b, xd, H)
            h = cache[0][1:]
            if d == 1:
                h = h[::-1]
            if not np.all(np.isfinite(h)):
                raise NumericalError(f"non-finite activations in layer {layer + 1} "
                                     f"({'backward' if d else 'forward'} direction)")
            outs.append(h)
            layer_cache.append((xd, cache))
        caches.append(layer_cache)
        inp = np.concatenate(outs, axis=1) if nd == 2 else outs[0]
    y = inp @ w_out + b_out
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite values in the output projection")
    if keep:
        return y, (caches, inp)
    return y


def forward(model, onsets):
    """Predicted envelope, one value per input sample."""
    x = _as_input(onsets, model.cfg.input_size)
    return _forward_raw(model, x) * model.target_std + model.target_mean


def loss_and_grad(model, x, target, flat=None):
    """Mean squared error in normalised units and its gradient (flat vector)."""
    x = _as_input(x, model.cfg.input_size)
    target = np.asarray(target, dtype=np.float64)
    cfg = model.cfg
    H, nd = cfg.hidden_size, cfg.n_directions
    y, (caches, top) = _forward_raw(model, x, flat, keep=True)
    T = len(y)
    err = y - target
    loss = float(err @ err) / T
    dy = 2.0 * err / T

    grad = np.zeros(model.n_params)
    gcells, (gw_out, gb_out) = model.cells(grad)
    cells, (w_out, _) = model.cells(flat)
    gw_out[...] = top.T @ dy
    gb_out[...] = dy.sum()
    d_in = np.outer(dy, w_out)
    for layer in range(cfg.n_layers - 1, -1, -1):
        d_below = None
        for d in range(nd):
            W, _ = cells[layer][d]
            xd, cache = caches[layer][d]
            dH = d_in[:, d * H:(d + 1) * H]
            if d == 1:
                dH = dH[::-1]
            dW, db, dX = _back_direction(W, xd, H, cache, dH)
            gW, gb = gcells[layer][d]
            gW[...] = dW
            gb[...] = db
            if d == 1:
                dX = dX[::-1]
            d_below = dX if d_below is None else d_below + dX
        d_in = d_below
    return loss, grad


def gradient_check(model, x, target, fraction=0.01, step=1e-5, seed=0, floor=1e-6):
    """Largest relative error between analytic and central-difference gradients.

    A random ``fraction`` of parameters is checked. The relative error of
    one coordinate is ``|a - n| / max(|a| + |n|, floor)``. Central
    differences at ``step=1e-5`` carry roughly 1e-11 of rounding noise, so
    gradients below ``floor`` are compared in absolute terms.
    """
    n_check = int(round(fraction * model.n_params))
    if n_check < 1:
        raise ConfigError(f"fraction {fraction} of {model.n_params} parameters selects none")
    x = _as_input(x, model.cfg.input_size)
    _, analytic = loss_and_grad(model, x, target)
    rng = np.random.default_rng(seed)
    idx = rng.choice(model.n_params, size=n_check, replace=False)
    worst = 0.0
    flat = model.params.copy()
    for k in idx:
        old = flat[k]
        flat[k] = old + step
        lp, _ = _loss_only(model, x, target, flat)
        flat[k] = old - step
        lm, _ = _loss_only(model, x, target, flat)
        flat[k] = old
        numeric = (lp - lm) / (2 * step)
        a = analytic[k]
        rel = abs(a - numeric) / max(abs(a) + abs(numeric), floor)
        worst = max(worst, rel)
    return worst


def _loss_only(model, x, target, flat):
    y = _forward_raw(model, x, flat)
    err = y - np.asarray(target, dtype=np.float64)
    return float(err @ err) / len(y), None


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_r: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "val_r"])
            for e, m, r in zip(self.epochs, self.train_mse, self.val_r):
                w.writerow([e, f"{m:.10g}", f"{r:.10g}"])


class _Adam:
    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _pairs(data):
    out = []
    for onsets, env in data:
        x = np.asarray(getattr(onsets, "bits", onsets), dtype=np.float64)
        y = np.asarray(getattr(env, "values", env), dtype=np.float64)
        if len(x) != len(y):
            raise DataError(f"onset ({len(x)}) and envelope ({len(y)}) lengths differ")
        out.append((x, y))
    return out


def _pooled_r(model, pairs):
    pred = np.concatenate([forward(model, x) for x, _ in pairs])
    env = np.concatenate([y for _, y in pairs])
    if np.ptp(pred) == 0 or np.ptp(env) == 0:
        return np.nan
    return pearson(pred, env)


def train(model, train_set, val_set, cfg=None, progress=None):
    """Adam on per-sentence MSE with early stopping on validation r.

    Targets are z-scored with training-set statistics, gradients clipped to
    ``cfg.clip_norm``. The returned model is the best-validation checkpoint.

    Returns
    -------
    (SeqModel, TrainHistory)
    """
    cfg = (cfg or model.cfg).validate()
    train_pairs = _pairs(train_set)
    val_pairs = _pairs(val_set)
    if not train_pairs:
        raise DataError("training set is empty")
    if not val_pairs:
        raise DataError("validation set is empty")
    all_y = np.concatenate([y for _, y in train_pairs])
    mu = float(all_y.mean())
    sd = float(all_y.std()) or 1.0
    model = model.copy()
    model.target_mean, model.target_std = mu, sd
    norm = [(x, (y - mu) / sd) for x, y in train_pairs]

    rng = np.random.default_rng(cfg.seed + 1)
    opt = _Adam(model.n_params, cfg.learning_rate)
    hist = TrainHistory()
    best, best_r, stale = model.copy(), -np.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for k in rng.permutation(len(norm)):
            x, y = norm[k]
            loss, g = loss_and_grad(model, x, y)
            gn = float(np.sqrt(g @ g))
            if gn > cfg.clip_norm:
                g *= cfg.clip_norm / gn
            opt.step(model.params, g)
            losses.append(loss)
        val_r = _pooled_r(model, val_pairs)
        hist.epochs.append(epoch)
        hist.train_mse.append(float(np.mean(losses)))
        hist.val_r.append(float(val_r))
        if progress is not None:
            progress(epoch, hist.train_mse[-1], val_r)
        if np.isfinite(val_r) and val_r > best_r:
            best, best_r, stale = model.copy(), val_r, 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, hist


@dataclass(frozen=True)
class EvalResult:
    pooled_r: float
    sentence_r: list
    undefined: bool = False


def evaluate(model, test_set):
    """Pearson r between predictions and envelopes, pooled and per sentence.

    Per-sentence values are NaN where either side is constant; ``undefined``
    flags a constant pooled prediction.
    """
    pairs = _pairs(test_set)
    if not pairs:
        raise DataError("test set is empty")
    preds = [forward(model, x) for x, _ in pairs]
    per = []
    for p, (_, y) in zip(preds, pairs):
        per.append(pearson(p, y) if len(p) >= 3 and np.ptp(p) > 0 and np.ptp(y) > 0 else float("nan"))
    p = np.concatenate(preds)
    y = np.concatenate([y for _, y in pairs])
    if np.ptp(p) == 0 or np.ptp(y) == 0:
        return EvalResult(float("nan"), per, True)
    return EvalResult(pearson(p, y), per, False)


def split_sentences(ids, seed=0, train=0.8):
    """Random train/validation/test split; the remainder is halved."""
    ids = list(ids)
    n = len(ids)
    if n < 3:
        raise DataError("need at least 3 sentences to split into train/val/test")
    order = np.random.default_rng(seed).permutation(n)
    n_rest = max(2, int(round((1 - train) * n)))
    n_val = n_rest // 2
    val = [ids[i] for i in order[:n_val]]
    test = [ids[i] for i in order[n_val:n_rest]]
    tr = [ids[i] for i in order[n_rest:]]
    return SplitSpec(tr, val, test)


@dataclass(frozen=True)
class SplitSpec:
    train: list
    val: list
    test: list

    def __post_init__(self):
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise DataError("train/val/test splits overlap")
