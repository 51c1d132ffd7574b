"""Run configuration: ``key=value`` files with ``#`` comments plus flag overrides."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

from .model import ModelConfig

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "load_config", "DOCS"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # model
    side: int = 64
    c: int = 64
    d: int = 384
    convertor_layers: int = 4
    decoder_layers: tuple[int, int, int] = (4, 2, 2)
    encoder_layers: int = 4
    modality: str = "rgb"
    heads: int = 6
    t2t_heads: int = 1
    ffn_ratio: float = 4.0
    seed: int = 0
    sia_mode: str = "select"
    decoder_attention: str = "sia"
    # inputs and outputs
    rgb: str = ""
    depth: str = ""
    gt: str = ""
    out: str = "out"
    resize: bool = False
    # macs
    fg_fraction: float = 0.5
    # gradcheck
    gradcheck_side: int = 32
    gradcheck_entries: int = 3
    gradcheck_directions: int = 2
    gradcheck_step: float = 1e-5
    gradcheck_tol: float = 1e-4
    # overfit
    steps: int = 2000
    lr: float = 1e-3
    loss_threshold: float = 0.05
    mae_threshold: float = 0.05
    log_every: int = 100

    def model_config(self, **overrides) -> ModelConfig:
        kw = {name: getattr(self, name) for name in ModelConfig.field_names()}
        kw.update(overrides)
        return ModelConfig(**kw)

    def with_values(self, values: dict[str, str]) -> "RunConfig":
        """Return a copy with string values parsed to each field's type."""
        known = {f.name: f for f in fields(self)}
        parsed = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _parse_value(key, raw, getattr(self, key))
        merged = {**asdict(self), **parsed}
        merged["decoder_layers"] = tuple(merged["decoder_layers"])
        cfg = RunConfig(**merged)
        try:
            cfg.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of every setting except the output directory, which cannot change results."""
        text = "".join(line + "\n" for line in self.to_text().splitlines() if not line.startswith("out="))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


DOCS = {
    "side": "input height and width in pixels, a multiple of 16",
    "c": "token width of the tokens-to-token stages and the upsampler",
    "d": "token width of the transformer stages",
    "convertor_layers": "transformer layers in the convertor",
    "decoder_layers": "decoder layers at 1/16, 1/8, 1/4 as a comma list",
    "encoder_layers": "transformer layers after the last soft split",
    "modality": "rgb or rgbd",
    "heads": "attention heads at width d",
    "t2t_heads": "attention heads at width c",
    "ffn_ratio": "hidden width of the feed-forward block as a multiple of its input",
    "seed": "seed for parameter init and synthetic inputs",
    "sia_mode": "select (gather foreground keys) or masked (additive key mask)",
    "decoder_attention": "sia or self (plain self-attention at every decoder level)",
    "rgb": "P6 colour image path; empty means a synthetic image",
    "depth": "P5 depth map path for rgbd; empty means a synthetic map",
    "gt": "P5 ground-truth mask path; empty means the synthetic square",
    "out": "output directory",
    "resize": "nearest-resize inputs to side instead of rejecting other sizes",
    "fg_fraction": "foreground fraction of the synthetic masks used by macs",
    "gradcheck_side": "input side of the model used by gradcheck",
    "gradcheck_entries": "largest-gradient entries checked per parameter",
    "gradcheck_directions": "random directional derivatives checked per parameter",
    "gradcheck_step": "central-difference step",
    "gradcheck_tol": "maximum allowed relative error",
    "steps": "gradient-descent steps for overfit",
    "lr": "learning rate for overfit",
    "loss_threshold": "overfit fails when the final total loss is at or above this",
    "mae_threshold": "overfit fails when the final full-resolution MAE is at or above this",
    "log_every": "overfit prints a progress line every this many steps",
}


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key!r} (expected {type(default).__name__})") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = RunConfig()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cfg.with_values(parse_config_text(text, str(path)))
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg
