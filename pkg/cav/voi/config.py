"""Experiment configuration: YAML loading, --set overrides and validation."""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import yaml

from cav.voi.data.enums import Scenario
from cav.voi.data.params import ExperimentConfig
from cav.voi.exceptions import ConfigError, ContractViolationError, ValidationError
from cav.voi.utils import ensure_dir

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_NAME = "config.yaml"

POLICY_SOURCES = ("dp", "td3")


@dataclass
class ValidationReport:
    """Outcome of validate(); violations name the offending keys."""

    valid: bool
    violations: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {"valid": self.valid, "violations": list(self.violations)}


# ==================== Loading ====================


def load_config(path: str) -> ExperimentConfig:
    """Load an experiment configuration from a YAML file.

    Args:
        path: YAML file holding a mapping of top-level keys and sections

    Returns:
        ExperimentConfig; keys the file omits keep their defaults

    Raises:
        ConfigError: If the file is missing, is not valid YAML, is not a mapping or holds
            unknown keys
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}", violations=["config"]) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {path} is not valid YAML: {e}",
                          violations=["config"]) from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a mapping", violations=["config"])
    logger.debug("loaded config from %s", path)
    return ExperimentConfig.from_dict(data)


def parse_override(item: str) -> Tuple[List[str], Any]:
    """Split "section.key=value" into its key path and a YAML-typed value.

    Example:
        parse_override("network.dt=0.02")  # (["network", "dt"], 0.02)

    Raises:
        ConfigError: If the item has no "=" or an empty key
    """
    key, sep, raw = item.partition("=")
    path = [part.strip() for part in key.strip().split(".")]
    if not sep or not all(path):
        raise ConfigError(f"override must look like section.key=value, got {item!r}",
                          violations=[item])
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError:
        value = raw
    return path, value


def apply_overrides(config: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    """Return a copy of config with the --set items applied in order.

    The applied items are recorded in the copy's overrides map.

    Raises:
        ConfigError: On a malformed item, an unknown key, or a value a section rejects
    """
    data = config.to_dict()
    applied = dict(data.get("overrides") or {})
    for item in overrides:
        path, value = parse_override(item)
        if len(path) > 2:
            raise ConfigError(f"override key {'.'.join(path)} is nested too deep",
                              violations=[".".join(path)])
        if len(path) == 2:
            section, key = path
            if section not in ExperimentConfig.SECTIONS:
                raise ConfigError(f"unknown config section {section!r}", violations=[section])
            data[section][key] = value
        else:
            if path[0] in ExperimentConfig.SECTIONS or path[0] == "overrides":
                raise ConfigError(f"{path[0]} cannot be overridden as a whole",
                                  violations=[path[0]])
            data[path[0]] = value
        applied[".".join(path)] = value
    data["overrides"] = applied
    return ExperimentConfig.from_dict(data)


def build_config(
    config_path: Optional[str] = None,
    scenario: Optional[str] = None,
    seed: Optional[int] = None,
    episodes: Optional[int] = None,
    out_dir: Optional[str] = None,
    overrides: Iterable[str] = (),
) -> ExperimentConfig:
    """Merge a config file, explicit flags and --set items, in that order of precedence.

    Explicit flags beat the file; --set items beat both.
    """
    config = load_config(config_path) if config_path else ExperimentConfig()
    if scenario is not None:
        config.scenario = scenario
    if seed is not None:
        config.seed = seed
    if episodes is not None:
        config.episodes = episodes
    if out_dir is not None:
        config.out_dir = out_dir
    return apply_overrides(config, list(overrides))


# ==================== Validation ====================


def validate(config: ExperimentConfig) -> ValidationReport:
    """Schema and cross-field checks, without running anything.

    Args:
        config: Configuration to check

    Returns:
        ValidationReport listing every violation found
    """
    found: List[str] = []
    scenarios = [s.value for s in Scenario]
    if config.scenario not in scenarios:
        found.append(f"scenario: unknown scenario {config.scenario!r} "
                     f"(expected one of {', '.join(scenarios)})")
    if isinstance(config.seed, bool) or not isinstance(config.seed, int) or config.seed < 0:
        found.append(f"seed: must be an integer >= 0, got {config.seed!r}")
    if not isinstance(config.episodes, int) or config.episodes < 2:
        found.append(f"episodes: must be an integer >= 2, got {config.episodes!r}")
    if not isinstance(config.horizon, int) or config.horizon < 1:
        found.append(f"horizon: must be an integer >= 1, got {config.horizon!r}")
    if not 0.0 < config.gamma < 1.0:
        found.append(f"gamma: must be in (0, 1), got {config.gamma!r}")
    if config.policy_source not in POLICY_SOURCES:
        found.append(f"policy_source: must be dp or td3, got {config.policy_source!r}")
    if not config.out_dir:
        found.append("out_dir: must not be empty")
    if config.trajectory_path is not None and not os.path.isfile(config.trajectory_path):
        found.append(f"trajectory_path: no such file {config.trajectory_path}")

    found.extend(config.network.violations())
    if abs(config.network.control_interval - config.vehicle.T) > 1e-9:
        found.append(
            f"network: control_interval = {config.network.control_interval:g} s must equal "
            f"vehicle.T = {config.vehicle.T:g} s"
        )
    for name in ("stop_and_go", "train", "method_a", "grid", "comm", "tabular"):
        try:
            getattr(config, name).validate()
        except ConfigError as e:
            found.extend(e.violations or [str(e)])
    try:
        config.geometry.validate(config.network)
    except (ContractViolationError, ValidationError) as e:
        found.append(f"geometry: {e}")

    for message in found:
        logger.debug("config violation: %s", message)
    return ValidationReport(valid=not found, violations=found)


def check(config: ExperimentConfig) -> ExperimentConfig:
    """Validate and raise on the first report with violations.

    Raises:
        ConfigError: Carrying every violation of the report
    """
    report = validate(config)
    if not report.valid:
        raise ConfigError("; ".join(report.violations), violations=report.violations)
    return config


# ==================== Output ====================


def dump_config(config: ExperimentConfig) -> str:
    """Serialize config as YAML with keys in declaration order."""
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=False)


def write_effective_config(config: ExperimentConfig, out_dir: Optional[str] = None) -> str:
    """Write the effective config next to a run's outputs.

    Returns:
        Path of the written YAML file
    """
    directory = ensure_dir(out_dir or config.out_dir)
    path = os.path.join(directory, EFFECTIVE_CONFIG_NAME)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump_config(config))
    return path
