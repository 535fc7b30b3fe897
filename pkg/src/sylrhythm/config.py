"""Run configuration shared by the CLI subcommands."""

import json
import os
from dataclasses import dataclass, field, asdict, fields

from .envelope import FilterbankSpec
from .errors import ConfigError
from .seq2seq import SeqModelConfig

DURATION_GRID = tuple(float(2 ** k) for k in range(2, 11))   # 4 ... 1024 s


@dataclass
class RunConfig:
    manifest: str = ""
    out: str = "out"
    seed: int = 0
    jobs: int = 0                      # 0 -> logical cores
    stages: dict = field(default_factory=lambda: {"trf": True, "seq": True, "permutation": True})
    filterbank: dict = field(default_factory=lambda: asdict(FilterbankSpec()))
    pad_duration: float = 20.0
    peak_band: tuple = (1.0, 32.0)
    detrend_1f: bool = False
    kde_grid: tuple = (0.0, 20.0, 0.01)
    duration_grid: tuple = DURATION_GRID
    subset_draws: int = 10
    folds: int = 10
    lambda_grid: tuple = tuple(10.0 ** k for k in range(-2, 5))
    per_sentence_r: bool = False
    n_permutations: int = 1000
    seq: dict = field(default_factory=lambda: asdict(SeqModelConfig()))

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg = cls()
        for k, v in data.items():
            default = getattr(cfg, k)
            if isinstance(default, dict):
                bad = set(v) - set(default)
                if bad:
                    raise ConfigError(f"unknown key(s) in {k}: {', '.join(sorted(bad))}")
                v = {**default, **v}
            elif isinstance(default, tuple):
                v = tuple(v)
            setattr(cfg, k, v)
        return cfg.validate()

    def filterbank_spec(self):
        return FilterbankSpec(**self.filterbank)

    def seq_config(self):
        return SeqModelConfig(**self.seq)

    def resolved_jobs(self):
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def validate(self):
        try:
            self.filterbank_spec().validate()
            self.seq_config().validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        lo, hi = self.peak_band
        if not 0 <= lo < hi:
            raise ConfigError(f"invalid peak band {self.peak_band}")
        if self.pad_duration <= 0:
            raise ConfigError("pad_duration must be positive")
        if len(self.kde_grid) != 3 or self.kde_grid[2] <= 0 or self.kde_grid[1] <= self.kde_grid[0]:
            raise ConfigError(f"invalid KDE grid {self.kde_grid}")
        if any(v < 0 for v in self.lambda_grid) or not self.lambda_grid:
            raise ConfigError("lambda grid must be non-empty and non-negative")
        if self.folds < 2 or self.subset_draws < 1 or self.n_permutations < 1:
            raise ConfigError("folds >= 2, subset_draws >= 1 and n_permutations >= 1 required")
        if any(d <= 0 for d in self.duration_grid):
            raise ConfigError("duration grid entries must be positive")
        unknown = set(self.stages) - {"trf", "seq", "permutation"}
        if unknown:
            raise ConfigError(f"unknown stage(s): {', '.join(sorted(unknown))}")
        return self

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d
