"""
Run Configuration Module

Loads, validates and canonically serializes RunConfig documents, and reads
environment defaults from the .env file.

RunConfig JSON schema (every key optional; missing keys take the defaults):
    {
      "model":   {ModelConfig fields},
      "train":   {TrainConfig fields},
      "augment": {AugmentConfig fields},
      "data":    {DataConfig fields},
      "output_dir": str | null
    }
Unknown keys at any level are rejected.
"""

import copy
import dataclasses
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv

from errors import ConfigError
from presets import PRESETS
from state import AugmentConfig, DataConfig, ModelConfig, RunConfig, TrainConfig

ENV_OUTPUT_DIR = "MAMBA_CNN_OUTPUT_DIR"
ENV_LOG_DIR = "MAMBA_CNN_LOG_DIR"
ENV_TRACE_STEPS = "MAMBA_CNN_TRACE_STEPS"

SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "data": DataConfig,
}


def _section_from_dict(cls, doc: Any, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must be a JSON object, got {type(doc).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(k for k in doc if k not in fields)
    if unknown:
        raise ConfigError(
            f"Unknown key(s) in {path}: {', '.join(f'{path}.{k}' for k in unknown)}\n"
            f"Allowed keys: {', '.join(fields)}"
        )
    defaults = cls()
    kwargs = {}
    for name, value in doc.items():
        default = getattr(defaults, name)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                raise ConfigError(f"{path}.{name} must be a list of {len(default)} numbers, got {value!r}")
            value = tuple(value)
        elif isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"{path}.{name} must be a list, got {value!r}")
        elif isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{path}.{name} must be true or false, got {value!r}")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{name} must be a number, got {value!r}")
            if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
                if not value.is_integer():
                    raise ConfigError(f"{path}.{name} must be an integer, got {value!r}")
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
        kwargs[name] = value
    return cls(**kwargs)


def model_config_from_dict(doc: Dict[str, Any]) -> ModelConfig:
    return _section_from_dict(ModelConfig, doc, "model")


def train_config_from_dict(doc: Dict[str, Any]) -> TrainConfig:
    return _section_from_dict(TrainConfig, doc, "train")


def augment_config_from_dict(doc: Dict[str, Any]) -> AugmentConfig:
    return _section_from_dict(AugmentConfig, doc, "augment")


def run_config_from_dict(doc: Dict[str, Any], validate: bool = True) -> RunConfig:
    """
    Builds a RunConfig from a JSON document with strict key checking.

    Raises:
        ConfigError: Unknown key (named by its full path), wrong value type,
            or a section that fails validation
    """
    if not isinstance(doc, dict):
        raise ConfigError(f"RunConfig must be a JSON object, got {type(doc).__name__}")
    unknown = sorted(k for k in doc if k not in SECTIONS and k != "output_dir")
    if unknown:
        raise ConfigError(
            f"Unknown top-level key(s) in RunConfig: {', '.join(unknown)}\n"
            f"Allowed keys: {', '.join(list(SECTIONS) + ['output_dir'])}"
        )
    kwargs = {name: _section_from_dict(cls, doc.get(name, {}), name) for name, cls in SECTIONS.items()}
    output_dir = doc.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError(f"output_dir must be a string or null, got {output_dir!r}")
    config = RunConfig(output_dir=output_dir, **kwargs)
    return config.validate() if validate else config


def run_config_to_dict(config: RunConfig) -> Dict[str, Any]:
    doc = dataclasses.asdict(config)
    for section in doc.values():
        if isinstance(section, dict):
            for key, value in section.items():
                if isinstance(value, tuple):
                    section[key] = list(value)
    return doc


def dump_run_config(config: RunConfig) -> str:
    """Canonical JSON text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(run_config_to_dict(config), sort_keys=True, indent=2) + "\n"


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset_document(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name]["config"])


def load_run_config(path: Optional[Union[str, Path]] = None, preset: Optional[str] = None) -> RunConfig:
    """
    Loads a RunConfig from a JSON file, a preset, or both (file keys override
    the preset). With neither, returns the defaults.

    Raises:
        ConfigError: Missing or unparsable file, unknown key or invalid value
    """
    doc: Dict[str, Any] = preset_document(preset) if preset else {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            file_doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from None
        if not isinstance(file_doc, dict):
            raise ConfigError(f"Config file {path} must contain a JSON object")
        doc = _merge(doc, file_doc)
    return run_config_from_dict(doc)


def save_run_config(path: Union[str, Path], config: RunConfig) -> None:
    Path(path).write_text(dump_run_config(config), encoding="utf-8")


# === Environment defaults ===

def load_env() -> None:
    """Loads .env into the process environment (existing variables win)."""
    load_dotenv(override=False)


def env_output_dir(default: str = "./runs") -> str:
    return os.getenv(ENV_OUTPUT_DIR, "").strip() or default


def env_log_dir(output_dir: Union[str, Path]) -> str:
    return os.getenv(ENV_LOG_DIR, "").strip() or str(Path(output_dir) / "run_logs")


def env_trace_steps() -> bool:
    value = os.getenv(ENV_TRACE_STEPS, "false").strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("", "0", "false", "no", "off"):
        return False
    raise ConfigError(f"{ENV_TRACE_STEPS} must be true or false, got {value!r}")
