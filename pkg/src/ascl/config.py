"""Training configuration and its flat ``section.key = value`` text format.

Example::

    # desk-scale defaults
    train.epochs = 50
    loss.tau = 0.05
    noise.kind = mixture
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .samplegen import NoiseStrategy, PositiveStrategy

ABLATIONS = ("full", "no_pos", "no_neg", "no_pn", "no_mf", "triplet")
LR_SCHEDULES = ("decay_0.9_per10", "decay_0.1_per10", "constant")


@dataclass(frozen=True)
class TrainConfig:
    dim: int = field(default=64, metadata={"key": "model.dim"})
    heads: int = field(default=4, metadata={"key": "model.heads"})
    regions: int = field(default=0, metadata={"key": "model.regions"})
    u1: float = field(default=0.8, metadata={"key": "model.u1"})
    lam: float = field(default=0.5, metadata={"key": "model.lambda"})
    learn_lambda: bool = field(default=False, metadata={"key": "model.learn_lambda"})
    positional_encoding: bool = field(default=True, metadata={"key": "model.positional_encoding"})
    positional_scale: float = field(default=0.02, metadata={"key": "model.positional_scale"})
    tie_directions: bool = field(default=False, metadata={"key": "model.tie_directions"})
    batch_size: int = field(default=8, metadata={"key": "train.batch_size"})
    epochs: int = field(default=50, metadata={"key": "train.epochs"})
    lr: float = field(default=1e-3, metadata={"key": "train.lr"})
    lr_schedule: str = field(default="decay_0.9_per10", metadata={"key": "train.lr_schedule"})
    seed: int = field(default=0, metadata={"key": "train.seed"})
    threads: int = field(default=1, metadata={"key": "train.threads"})
    ablation: str = field(default="full", metadata={"key": "train.ablation"})
    tau: float = field(default=0.05, metadata={"key": "loss.tau"})
    margin: float = field(default=0.2, metadata={"key": "loss.margin"})
    noise_kind: str = field(default="mixture", metadata={"key": "noise.kind"})
    noise_sigma: float = field(default=0.1, metadata={"key": "noise.sigma"})
    noise_p: float = field(default=0.1, metadata={"key": "noise.p"})
    noise_cut_count: int = field(default=1, metadata={"key": "noise.cut_count"})
    positive_kind: str = field(default="alternate", metadata={"key": "positive.kind"})
    positive_ratio: float = field(default=0.5, metadata={"key": "positive.ratio"})
    positive_max_length: int = field(default=64, metadata={"key": "positive.max_length"})

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"model.heads={self.heads} must divide model.dim={self.dim}")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be at least 2")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be at least 1")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"train.lr_schedule must be one of {LR_SCHEDULES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"train.ablation must be one of {ABLATIONS}")
        if not self.tau > 0:
            raise ConfigError("loss.tau must be positive")
        if not 0.0 <= self.u1 <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigError("model.u1 and model.lambda must lie in [0, 1]")
        if self.threads < 1:
            raise ConfigError("train.threads must be at least 1")
        # surface strategy errors at construction time
        self.noise
        self.positive

    @property
    def noise(self):
        return NoiseStrategy(self.noise_kind, self.noise_sigma, self.noise_p, self.noise_cut_count)

    @property
    def positive(self):
        return PositiveStrategy(self.positive_kind, self.positive_ratio, self.positive_max_length)

    def lr_at(self, epoch):
        """Learning rate for the 0-based ``epoch``."""
        if self.lr_schedule == "decay_0.9_per10":
            return self.lr * 0.9 ** (epoch // 10)
        if self.lr_schedule == "decay_0.1_per10":
            return self.lr * 0.1 ** (epoch // 10)
        return self.lr

    def to_dict(self):
        return {f.metadata["key"]: getattr(self, f.name) for f in fields(self)}

    def dumps(self):
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())

    def with_overrides(self, items):
        """Apply ``{"section.key": value}`` overrides (strings are parsed)."""
        by_key = {f.metadata["key"]: f for f in fields(self)}
        changes = {}
        for key, raw in items.items():
            f = by_key.get(key)
            if f is None:
                raise ConfigError(f"unknown config key {key!r}")
            changes[f.name] = _coerce(raw, type(f.default), key)
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, items):
        return cls().with_overrides(items)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(raw, typ, key):
    if not isinstance(raw, str):
        if typ is float and isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, typ):
            return raw
        raw = str(raw)
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        items = parse_config_text(fh.read())
    items.update(overrides or {})
    return TrainConfig.from_dict(items)


def parse_overrides(pairs):
    """``["a.b=1", ...]`` -> ``{"a.b": "1"}``."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out
