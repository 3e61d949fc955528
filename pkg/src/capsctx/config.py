"""Flat ``key = value`` configuration with fail-closed validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    # input and stem
    image_size: int = 36
    in_channels: int = 1
    stem_channels: int = 32
    stem_kernel: int = 9
    stem_stride1: int = 2
    stem_stride2: int = 1
    # capsule geometry
    grid_size: int = 6
    capsule_depth: int = 8
    primary_dim: int = 8
    decision_dim: int = 16
    num_classes: int = 8
    w_init_std: float = 0.5
    # routing-weight initialisation
    use_rw: bool = True
    f: int = 5
    epsilon: float = 1e-4
    rw_kernel_noise: float = 0.01
    rw_kernel_center: float = 0.0
    # dynamic routing
    routing_iters: int = 3
    routing_axis: str = "k"
    # CRF
    use_crf: bool = True
    crf_iters: int = 3
    crf_share: str = "all"
    crf_init_gain: float = 1.0
    # correlation module
    use_corr: bool = True
    corr_lambda: float = 0.5
    corr_order: str = "forward"
    corr_feature: int = -1
    alpha_init_std: float = 0.01
    # loss
    m_plus: float = 0.9
    m_minus: float = 0.1
    lambda_down: float = 0.5
    # training
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    dtype: str = "float32"
    train_size: int = 500
    test_size: int = 200
    threshold: float = 0.5

    def __post_init__(self):
        validate(self)

    @property
    def z_channels(self) -> int:
        return self.capsule_depth * self.primary_dim

    @property
    def num_capsules(self) -> int:
        return self.grid_size * self.grid_size * self.capsule_depth

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for fd in fields(self):
            value = getattr(self, fd.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{fd.name} = {text}")
        return "\n".join(lines) + "\n"


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: ModelConfig) -> None:
    for name in ("image_size", "in_channels", "stem_channels", "stem_kernel", "stem_stride1",
                 "stem_stride2", "grid_size", "capsule_depth", "primary_dim", "decision_dim",
                 "num_classes", "routing_iters", "crf_iters", "epochs", "batch_size"):
        _check(getattr(cfg, name) >= 1, f"{name} must be >= 1")
    _check(cfg.f >= 1 and cfg.f % 2 == 1, "f must be odd")
    _check(0.0 < cfg.epsilon < 0.1, "epsilon must satisfy 0 < epsilon << 1")
    _check(0.0 <= cfg.corr_lambda <= 1.0, "corr_lambda must lie in [0, 1]")
    _check(cfg.routing_axis in ("k", "j"), "routing_axis must be 'k' or 'j'")
    _check(cfg.crf_init_gain >= 0, "crf_init_gain must be >= 0")
    _check(cfg.crf_share in ("all", "per-i"), "crf_share must be 'all' or 'per-i'")
    _check(cfg.corr_order in ("forward", "reversed"), "corr_order must be 'forward' or 'reversed'")
    _check(cfg.dtype in ("float32", "float64"), "dtype must be float32 or float64")
    _check(cfg.corr_feature >= -1, "corr_feature must be -1 (statistic mean) or a channel index")
    _check(cfg.corr_feature < cfg.capsule_depth * cfg.primary_dim,
           "corr_feature exceeds the number of stem channels")
    _check(not cfg.use_corr or cfg.num_capsules >= 2, "correlation module needs >= 2 capsules")
    _check(0.0 <= cfg.m_minus < cfg.m_plus <= 1.0, "need 0 <= m_minus < m_plus <= 1")
    _check(cfg.lambda_down >= 0.0, "lambda_down must be >= 0")
    _check(cfg.lr >= 0.0, "lr must be >= 0")
    _check(cfg.train_size >= 1 and cfg.test_size >= 0, "train_size >= 1, test_size >= 0")
    for name in ("w_init_std", "rw_kernel_noise", "alpha_init_std"):
        _check(getattr(cfg, name) >= 0.0, f"{name} must be >= 0")


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(name: str, kind, text: str):
    try:
        if kind is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text.strip("'\"")
    except ValueError:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {text!r}") from None


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config(text: str, base: ModelConfig | None = None) -> ModelConfig:
    known = {fd.name: _TYPES[fd.type] for fd in fields(ModelConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, known[key], value)
    base = base or ModelConfig()
    return dataclasses.replace(base, **values)


def load_config(path) -> ModelConfig:
    """Read a config file; a missing or unreadable file raises OSError."""
    return parse_config(Path(path).read_text(encoding="utf-8"))
