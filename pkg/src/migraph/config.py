"""Flat ``key = value`` run configuration shared by every command."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .data import SyntheticSpec, WindowConfig, _default_erd_channels
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # training
    lr_ae: float = 1e-3
    batch_ae: int = 32
    lr_st: float = 2e-4
    batch_st: int = 16
    lam: float = 0.3
    gamma: float = 1.0
    max_epochs: int = 100
    patience: int = 10
    dropout: float = 0.3
    seed: int = 42
    stgnn_input: str = "features"
    # windowing
    omega: int = 500
    step: int = 62
    # synthetic generator
    n_classes: int = 4
    n_channels: int = 22
    n_samples: int = 750
    fs: float = 250.0
    trials_per_class: int = 72
    erd_channels: list[list[int]] = field(default_factory=_default_erd_channels)
    erd_depth: float = 0.6
    noise_std: float = 4.0
    # paths
    data: str = ""
    out: str = ""

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            lr_ae=self.lr_ae, batch_ae=self.batch_ae, lr_st=self.lr_st, batch_st=self.batch_st,
            lam=self.lam, gamma=self.gamma, max_epochs=self.max_epochs, patience=self.patience,
            dropout=self.dropout, seed=self.seed if seed is None else seed, stgnn_input=self.stgnn_input,
        )

    def window(self) -> WindowConfig:
        return WindowConfig(self.omega, self.step)

    def synthetic(self) -> SyntheticSpec:
        spec = SyntheticSpec(
            n_classes=self.n_classes, n_channels=self.n_channels, n_samples=self.n_samples, fs=self.fs,
            trials_per_class=self.trials_per_class, erd_channels=[list(c) for c in self.erd_channels],
            erd_depth=self.erd_depth, noise_std=self.noise_std, seed=self.seed,
        )
        spec.validate()
        return spec

    def validate(self) -> None:
        try:
            self.train_config()
            self.window()
            self.synthetic()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        lines = []
        names = {v: k for k, v in _ALIASES.items()}
        for key, value in asdict(self).items():
            lines.append(f"{names.get(key, key)} = {_format(value)}")
        return "\n".join(lines) + "\n"


# "lambda" is the name used in config files; the dataclass field avoids the keyword
_ALIASES = {"lambda": "lam"}
_TYPES = {f.name: f for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, list):
        return "; ".join(",".join(str(c) for c in group) for group in value)
    return str(value)


def _parse_value(key: str, raw: str):
    default = getattr(RunConfig(), key)
    try:
        if key == "erd_channels":
            return [[int(c) for c in group.split(",") if c.strip()] for group in raw.split(";") if group.strip()]
        if isinstance(default, bool):
            raise ConfigError(f"unsupported boolean key {key}")
        if isinstance(default, int):
            value = int(raw)
            if key == "seed" and value < 0:
                raise ConfigError("seed must be an unsigned integer")
            return value
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    cfg = base if base is not None else RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        setattr(cfg, key, _parse_value(key, raw))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
