"""Run configuration: model dims, diffusion schedule, training, data layout,
and the adapter toggles. Defaults mirror the full-scale architecture table;
`configs/desk.cfg` shrinks everything to laptop scale."""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass
class Config:
    # model
    layers: int = 4
    heads: int = 4
    d_model: int = 512
    d_ff: int = 512
    dropout: float = 0.1
    # diffusion
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # training
    lr: float = 2e-4
    batch: int = 32
    train_steps: int = 20000
    seed: int = 0
    checkpoint_every: int = 1000
    # data
    t_frames: int = 120  # config key: T
    interval: int = 30
    bps_n: int = 1024
    # adapter toggles
    use_kha: bool = True
    use_gapa: bool = True
    gapa_tokens: int = 1

    def __post_init__(self):
        for name in ("layers", "heads", "d_model", "d_ff", "steps", "batch",
                     "train_steps", "t_frames", "interval", "bps_n", "gapa_tokens",
                     "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"config {name} must be positive")
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ValueError("beta bounds must satisfy 0 < start <= end < 1")


# file key -> dataclass field (identity except the frame-count key)
_KEY_TO_FIELD = {f.name: f.name for f in fields(Config)}
_KEY_TO_FIELD["T"] = "t_frames"
del _KEY_TO_FIELD["t_frames"]

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _parse_value(key, raw, target_type, line_no):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if target_type is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ValueError(
            f"config parse error, line {line_no}: {key} = {raw!r} is not a {target_type.__name__}"
        ) from None


def load_config(path):
    """Flat `key = value` text; `#` starts a comment; unknown keys are errors;
    missing keys take the defaults above."""
    overrides = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config parse error, line {line_no}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            field_name = _KEY_TO_FIELD.get(key)
            if field_name is None:
                raise ValueError(f"config parse error, line {line_no}: unknown key {key!r}")
            target_type = Config.__dataclass_fields__[field_name].type
            target_type = {"int": int, "float": float, "bool": bool}[target_type]
            overrides[field_name] = _parse_value(key, value, target_type, line_no)
    return Config(**overrides)
