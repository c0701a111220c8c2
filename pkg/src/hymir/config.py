"""Run configuration: two flat dataclasses plus the `key = value` text format.

The same flat namespace feeds the CLI config files, the flag overrides, and
the canonical text embedded in checkpoints, so a config always round-trips
text -> dataclasses -> text unchanged.
"""

from dataclasses import dataclass, fields


@dataclass
class ModelConfig:
    base_channels: int = 32
    stages: int = 3
    blocks_per_stage: int = 4
    window_base: int = 8
    window_step: int = 8
    ssm_state: int = 8
    mlp_ratio: float = 2.0
    no_dsm: bool = False
    no_rdcnn: bool = False
    no_mwsa: bool = False
    share_scan_params: bool = False
    task: str = "restoration"
    sr_scale: int = 2

    def validate(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.stages != 3:
            raise ValueError(f"the encoder-decoder is a fixed 3-stage design, got stages={self.stages}")
        if self.blocks_per_stage < 1:
            raise ValueError(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")
        if not self.no_mwsa and self.blocks_per_stage % 2:
            raise ValueError(
                f"blocks_per_stage={self.blocks_per_stage} must be even when attention is enabled "
                "(blocks alternate scan/attention in pairs); set no_mwsa = true for odd counts"
            )
        if self.window_base < 1 or self.window_step < 0:
            raise ValueError(f"bad window schedule: base={self.window_base}, step={self.window_step}")
        if self.ssm_state < 1:
            raise ValueError(f"ssm_state must be >= 1, got {self.ssm_state}")
        if self.mlp_ratio <= 0:
            raise ValueError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        if self.task not in ("restoration", "super_resolution"):
            raise ValueError(f"task must be restoration or super_resolution, got {self.task!r}")
        if self.task == "super_resolution" and self.sr_scale < 1:
            raise ValueError(f"sr_scale must be >= 1, got {self.sr_scale}")
        return self


@dataclass
class TrainConfig:
    lr_init: float = 2e-4
    lr_min: float = 1e-6
    total_steps: int = 2000
    batch: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    crop: int = 64
    seed: int = 0
    eval_every: int = 200
    clip_norm: float = 1.0
    loss_lambda: float = 0.1

    def validate(self):
        if not (0 < self.lr_min <= self.lr_init) and self.lr_init != 0:
            raise ValueError(f"need 0 < lr_min <= lr_init, got lr_min={self.lr_min}, lr_init={self.lr_init}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.crop < 1:
            raise ValueError(f"crop must be >= 1, got {self.crop}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.loss_lambda < 0:
            raise ValueError(f"loss_lambda must be >= 0, got {self.loss_lambda}")
        return self


def parse_config_text(text):
    """Parse `key = value` lines with # comments into a raw string dict."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ValueError(f"config line {lineno}: empty key or value")
        if key in raw:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _coerce(name, value, target_type):
    if target_type is bool:
        if value not in ("true", "false"):
            raise ValueError(f"config key {name}: expected true or false, got {value!r}")
        return value == "true"
    try:
        return target_type(value)
    except ValueError:
        raise ValueError(f"config key {name}: cannot parse {value!r} as {target_type.__name__}") from None


def configs_from_dict(raw):
    """Build (ModelConfig, TrainConfig) from a flat string dict, rejecting unknown keys."""
    model_fields = {f.name: f.type for f in fields(ModelConfig)}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    type_names = {"int": int, "float": float, "bool": bool, "str": str}
    mc, tc = ModelConfig(), TrainConfig()
    for key, value in raw.items():
        if key in model_fields:
            target, t = mc, model_fields[key]
        elif key in train_fields:
            target, t = tc, train_fields[key]
        else:
            known = sorted(model_fields) + sorted(train_fields)
            raise ValueError(f"unknown config key {key!r}; known keys: {', '.join(known)}")
        t = type_names[t] if isinstance(t, str) else t
        setattr(target, key, _coerce(key, str(value), t))
    mc.validate()
    tc.validate()
    return mc, tc


def configs_from_text(text):
    return configs_from_dict(parse_config_text(text))


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_configs(model_cfg, train_cfg):
    """Canonical text form: declared field order, one `key = value` per line."""
    lines = []
    for cfg in (model_cfg, train_cfg):
        for f in fields(cfg):
            lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"
