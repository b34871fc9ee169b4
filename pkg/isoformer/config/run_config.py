"""
Key=value configuration files with per-key provenance.

Experiment settings resolve in three layers, each overriding the previous:
the pydantic defaults of :class:`ExperimentConfig`, a key=value config file,
then command-line flags. Keys are dotted section paths
(``train.learning_rate``); list values are comma-separated.
"""

import logging
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ValidationError

from ..exceptions import InvalidConfig, IoFailure
from ..models.config_models import ExperimentConfig

logger = logging.getLogger(__name__)

Provenance = Literal["default", "file", "flag"]


def flatten(values: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Flatten nested mappings into dotted keys; lists are leaves."""
    flat: dict[str, Any] = {}
    for key, value in values.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: Mapping[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for dotted, value in flat.items():
        node = nested
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def format_value(value: Any) -> str:
    """Render a config value as config-file text."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, template: Any) -> Any:
    text = raw.strip()
    if isinstance(template, list):
        return [item.strip() for item in text.split(",") if item.strip()]
    if text.lower() in ("none", "null", ""):
        return None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """
    Parse key=value lines.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        dict[str, str]: Raw values keyed by dotted key, in file order

    Raises:
        InvalidConfig: For malformed or repeated keys, with the line number
    """
    values: dict[str, str] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InvalidConfig(f"{source}:{line_number}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise InvalidConfig(f"{source}:{line_number}: empty key")
        if key in values:
            raise InvalidConfig(f"{source}:{line_number}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def dump_config_text(config: BaseModel) -> str:
    """Serialise a config model as sorted key=value lines."""
    flat = flatten(config.model_dump(mode="json"))
    return "".join(f"{key}={format_value(flat[key])}\n" for key in sorted(flat))


def load_model_config(text: str, model_type: type[BaseModel], source: str = "<config>") -> BaseModel:
    """
    Rebuild a config model from :func:`dump_config_text` output.

    Raises:
        InvalidConfig: If a key is unknown or a value does not validate
    """
    defaults = flatten(model_type().model_dump(mode="json"))
    raw = parse_config_text(text, source)
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise InvalidConfig(f"{source}: unknown keys {', '.join(unknown)}")
    parsed = {key: _parse_value(value, defaults[key]) for key, value in raw.items()}
    try:
        return model_type.model_validate(unflatten({**defaults, **parsed}))
    except ValidationError as exc:
        raise InvalidConfig(f"{source}: {exc}") from exc


class ResolvedConfig(BaseModel):
    """An experiment config with the provenance of every key."""

    config: ExperimentConfig
    provenance: dict[str, Provenance]

    def values(self) -> dict[str, str]:
        flat = flatten(self.config.model_dump(mode="json"))
        return {key: format_value(flat[key]) for key in sorted(flat)}

    def as_manifest(self) -> dict[str, dict[str, str]]:
        return {
            key: {"value": value, "source": self.provenance.get(key, "default")}
            for key, value in self.values().items()
        }


def resolve_config(config_path: Optional[Union[str, Path]] = None,
                   overrides: Optional[Mapping[str, Any]] = None) -> ResolvedConfig:
    """
    Resolve defaults < config file < flag overrides.

    Args:
        config_path: Optional key=value file
        overrides: Dotted keys set on the command line; values may be strings
            or already-typed Python values

    Returns:
        ResolvedConfig: Validated config and per-key provenance

    Raises:
        InvalidConfig: For unknown keys, malformed lines or invalid values
        IoFailure: If the config file cannot be read
    """
    defaults = flatten(ExperimentConfig().model_dump(mode="json"))
    merged: dict[str, Any] = dict(defaults)
    provenance: dict[str, Provenance] = {key: "default" for key in defaults}

    layers: list[tuple[Provenance, str, Mapping[str, Any]]] = []
    if config_path is not None:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"Cannot read config {config_path}: {exc}") from exc
        layers.append(("file", str(config_path), parse_config_text(text, str(config_path))))
    if overrides:
        layers.append(("flag", "command line", overrides))

    for source, label, values in layers:
        unknown = sorted(set(values) - set(defaults))
        if unknown:
            raise InvalidConfig(f"{label}: unknown keys {', '.join(unknown)}")
        for key, value in values.items():
            merged[key] = _parse_value(value, defaults[key]) if isinstance(value, str) else value
            provenance[key] = source

    # Derived model fields follow the tissue count unless set explicitly.
    if provenance["model.tissue_names"] == "default" and provenance["model.num_tissues"] != "default":
        merged["model.tissue_names"] = []

    try:
        config = ExperimentConfig.model_validate(unflatten(merged))
    except ValidationError as exc:
        raise InvalidConfig(str(exc)) from exc

    logger.debug("Resolved config with %d non-default keys",
                 sum(1 for source in provenance.values() if source != "default"))
    return ResolvedConfig(config=config, provenance=provenance)
