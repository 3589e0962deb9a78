"""INI-style configuration: [model], [solver], [data], and [train] sections
with key = value lines mapped onto the corresponding config dataclasses.
Unknown keys are rejected so typos fail loudly.
"""

import configparser
import dataclasses

from .errors import ParameterError
from .model import ModelConfig
from .synth import DataConfig
from .training import TrainConfig

# solver settings live on the model config; the section split is cosmetic
_SOLVER_KEYS = {"cg_fwd_iters", "cg_bwd_iters", "cg_tol", "cg_bwd_warm_start"}


def _coerce(value: str, target_type):
    if target_type is bool:
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ParameterError(f"expected a boolean, got {value!r}")
    return target_type(value)


def _apply(section: dict, cfg, allowed=None):
    fields = {f.name: f.type for f in dataclasses.fields(cfg)}
    for key, value in section.items():
        if key not in fields or (allowed is not None and key not in allowed):
            raise ParameterError(
                f"unknown configuration key {key!r} for "
                f"{type(cfg).__name__}"
            )
        current = getattr(cfg, key)
        target = type(current)
        setattr(cfg, key, _coerce(value, target))
    return cfg


def load_configs(path):
    """Returns (ModelConfig, DataConfig, TrainConfig) built from the file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ParameterError(f"cannot read configuration file {path}")
    model_cfg = ModelConfig()
    data_cfg = DataConfig()
    train_cfg = TrainConfig()
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "model":
            _apply(items, model_cfg)
        elif section == "solver":
            _apply(items, model_cfg, allowed=_SOLVER_KEYS)
        elif section == "data":
            _apply(items, data_cfg)
        elif section == "train":
            _apply(items, train_cfg)
        else:
            raise ParameterError(f"unknown configuration section [{section}]")
    model_cfg.validate()
    return model_cfg, data_cfg, train_cfg
