"""Experiment configuration: an INI file with one section per pipeline stage.

Every key has a default except ``[dataset] path``. Unknown sections or keys
are rejected by name, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from ..models.base import MODEL_KINDS, ModelHyper
from ..scenarios import SCENARIOS
from ..unlearn.config import AlgoConfig, ConfigError
from ..unlearn.runner import POLICIES

# key -> type tag; "opt_float" accepts "none"
_ALGO_TYPES = {
    f.name: {"float": "float", "int": "int", "str": "str", "bool": "bool", "Optional[float]": "opt_float"}[f.type]
    for f in fields(AlgoConfig)
}
_HYPER_TYPES = {f.name: f.type for f in fields(ModelHyper)}


@dataclass
class ExperimentConfig:
    dataset_path: str = ""
    split: str = "leave_last_out"
    min_interactions: int = 2
    test_fraction: float = 0.2
    sensitive_categories: tuple[str, ...] = ()

    model_kind: str = "bpr_mf"
    epochs: int = 20
    hyper: ModelHyper = field(default_factory=ModelHyper)

    scenario: str = "sensitive"
    budget_fraction: float = 1e-4
    spam_fraction: float = 0.01
    n_target_items: int = 5
    popular_pool_size: int = 50
    spam_batch_size: int = 256

    algo: AlgoConfig = field(default_factory=AlgoConfig)
    policy: str = "continue"

    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    ks: tuple[int, ...] = (10, 20)
    out_dir: str = "runs"

    def validate(self) -> None:
        if not self.dataset_path:
            raise ConfigError("[dataset] path is required")
        if self.split not in ("leave_last_out", "temporal_fraction"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown divergence policy {self.policy!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be a non-empty list of positive integers")
        if self.spam_batch_size < 1 or self.spam_fraction <= 0 or self.budget_fraction <= 0:
            raise ConfigError("spam_batch_size, spam_fraction and budget_fraction must be positive")
        self.algo.validate()

    def digest(self) -> str:
        return hashlib.sha256(serialize_config(self).encode("utf-8")).hexdigest()[:12]


# section -> {key: (attribute path, type tag)}
def _schema() -> dict[str, dict[str, tuple[str, str]]]:
    return {
        "dataset": {
            "path": ("dataset_path", "str"),
            "split": ("split", "str"),
            "min_interactions": ("min_interactions", "int"),
            "test_fraction": ("test_fraction", "float"),
            "sensitive_categories": ("sensitive_categories", "str_list"),
        },
        "model": {
            "kind": ("model_kind", "str"),
            "epochs": ("epochs", "int"),
            **{k: (f"hyper.{k}", t) for k, t in _HYPER_TYPES.items()},
        },
        "scenario": {
            "name": ("scenario", "str"),
            "budget_fraction": ("budget_fraction", "float"),
            "spam_fraction": ("spam_fraction", "float"),
            "n_target_items": ("n_target_items", "int"),
            "popular_pool_size": ("popular_pool_size", "int"),
            "spam_batch_size": ("spam_batch_size", "int"),
        },
        "unlearn": {
            "policy": ("policy", "str"),
            **{k: (f"algo.{k}", t) for k, t in _ALGO_TYPES.items()},
        },
        "experiment": {
            "seeds": ("seeds", "int_list"),
            "ks": ("ks", "int_list"),
            "out_dir": ("out_dir", "str"),
        },
    }


def _convert(raw: str, tag: str, key: str) -> Any:
    raw = raw.strip()
    try:
        if tag == "str":
            return raw
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "opt_float":
            return None if raw.lower() in ("none", "") else float(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if tag == "int_list":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if tag == "str_list":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot read {raw!r} as {tag}") from None
    raise ConfigError(f"key {key!r}: unsupported type {tag}")


def _format(value: Any, tag: str) -> str:
    if tag == "opt_float" and value is None:
        return "none"
    if tag in ("int_list", "str_list"):
        return ", ".join(str(v) for v in value)
    if tag == "bool":
        return "true" if value else "false"
    if tag in ("float", "opt_float"):
        return repr(float(value))
    return str(value)


def _get(cfg: ExperimentConfig, path: str):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _set(values: dict, path: str, value) -> None:
    values[path] = value


def parse_config_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    schema = _schema()
    top, hyper, algo = {}, {}, {}
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in schema[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            path, tag = schema[section][key]
            value = _convert(raw, tag, key)
            if path.startswith("hyper."):
                hyper[path[6:]] = value
            elif path.startswith("algo."):
                algo[path[5:]] = value
            else:
                top[path] = value
    try:
        cfg = ExperimentConfig(**top, hyper=ModelHyper(**hyper), algo=AlgoConfig(**algo))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.dataset_path and base_dir is not None and not Path(cfg.dataset_path).is_absolute():
        cfg.dataset_path = str((base_dir / cfg.dataset_path).resolve())
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), path.parent)


def serialize_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, keys in _schema().items():
        parser[section] = {key: _format(_get(cfg, path), tag) for key, (path, tag) in keys.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def defaults_help() -> str:
    """Every config key with its default, for ``--help``."""
    cfg = ExperimentConfig(dataset_path="<required>")
    lines = []
    for section, keys in _schema().items():
        lines.append(f"[{section}]")
        for key, (path, tag) in keys.items():
            lines.append(f"  {key} = {_format(_get(cfg, path), tag)}")
    return "\n".join(lines)
