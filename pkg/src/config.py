"""
Experiment configuration files (YAML or JSON) with inheritance and CLI overrides
"""
import logging
import os
import re
from pathlib import Path
from typing import Dict, Iterable, Optional

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
PRESET_DIR = CONFIG_DIR / "presets"
OUTPUT_ENV = "DETSUM_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "reports"
GRID_PATTERN = re.compile(r"[-+.\w()]+(:[-+.\w()]+){2}")


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge two dicts, values of `override` win"""
    result = base.copy()
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def load_config(config_path: str, _seen: Optional[set] = None) -> dict:
    """
    Load an experiment config, resolving `extends` chains

    JSON files go through the YAML loader as well.

    Args:
        config_path: path of the YAML/JSON file

    Returns:
        Merged config dictionary
    """
    config_path = Path(config_path).resolve()
    seen = set() if _seen is None else _seen
    if config_path in seen:
        raise ConfigError(f"circular 'extends' at {config_path}")
    seen.add(config_path)

    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    with open(config_path, "r", encoding="utf-8") as f:
        try:
            config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {config_path}: {e}") from e
    if not isinstance(config, dict):
        raise ConfigError(f"{config_path} must contain a mapping at top level")

    if "extends" in config:
        base_config = load_config(config_path.parent / config["extends"], seen)
        config = deep_merge(base_config, config)
        del config["extends"]

    return config


def preset_path(name: str) -> Path:
    """Path of a shipped preset by name"""
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        available = sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))
        raise ConfigError(f"unknown preset '{name}', available: {available}")
    return path


def parse_override(text: str) -> tuple:
    """'--param.a.b=value' or 'a.b=value' -> ('a.b', parsed value)"""
    if text.startswith("--"):
        text = text[2:]
    if text.startswith("param."):
        text = text[len("param."):]
    if "=" not in text:
        raise ConfigError(f"override must look like --param.<key>=<value>, got '{text}'")
    key, raw = text.split("=", 1)
    if not key:
        raise ConfigError(f"empty key in override '{text}'")
    # YAML 1.1 reads "1:2:5" as a base-60 integer; grids stay strings
    if GRID_PATTERN.fullmatch(raw.strip()):
        return key, raw.strip()
    try:
        return key, yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override value '{raw}': {e}") from e


def apply_cli_overrides(config: dict, overrides: Iterable[str]) -> dict:
    """
    Apply dotted-key overrides

    Args:
        config: merged config
        overrides: strings such as "sums.radii=1:2:5" or "--param.seed=7"

    Returns:
        The overridden config (a new dict)
    """
    config = deep_merge(config, {})
    for item in overrides:
        key, value = parse_override(item)
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"cannot override '{key}': '{part}' is not a section")
            else:
                child = node[part] = dict(child)
            node = child
        node[parts[-1]] = value
        logger.info(f"CLI override: {key} = {value}")
    return config


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT_DIR)
