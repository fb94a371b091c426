"""
Experiment configuration files.

Plain key=value lines grouped under [scene], [train] and [experiment].
A key may also be written qualified (``experiment.x_percent = 10``) in
any section. ``#`` and ``;`` start comments, lists are comma separated
and ``bs_subset_<count>`` pins the BS columns kept for that count.
"""

import re
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import ArtifactIOError, ConfigParseError, ConfigValidationError
from app.schemas.experiment import ExperimentConfig
from app.schemas.neural import TrainConfig
from app.schemas.scene import SceneConfig
from app.services.storage import read_text


SECTIONS = ("scene", "train", "experiment")
SUBSET_KEY = re.compile(r"^bs_subset_(\d+)$")
_COMMENT = re.compile(r"[#;].*$")
_SECTION = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")

_SECTION_FIELDS = {
    "scene": set(SceneConfig.model_fields),
    "train": set(TrainConfig.model_fields),
    "experiment": set(ExperimentConfig.model_fields) - {"scene", "train", "bs_subsets"},
}


def _split_key(raw_key: str, section: Optional[str], line: int, text: str) -> Tuple[str, str]:
    if "." in raw_key:
        section, key = raw_key.split(".", 1)
    else:
        key = raw_key
    if section is None:
        raise ConfigParseError("Keys outside a section must be qualified, e.g. experiment.n", line=line, text=text)
    if section not in SECTIONS:
        raise ConfigValidationError(
            f"Unknown section '{section}'",
            field=section,
            constraint="unknown-section"
        )
    if key not in _SECTION_FIELDS[section] and not (section == "experiment" and SUBSET_KEY.match(key)):
        raise ConfigValidationError(
            f"Unknown key '{section}.{key}'",
            field=f"{section}.{key}",
            constraint="unknown-key"
        )
    return section, key


def _raw_values(text: str) -> Dict[str, Dict[str, str]]:
    values: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    seen_at: Dict[Tuple[str, str], int] = {}
    section: Optional[str] = None

    for number, original in enumerate(text.splitlines(), start=1):
        line = _COMMENT.sub("", original).strip()
        if not line:
            continue
        header = _SECTION.match(line)
        if header:
            section = header.group(1)
            if section not in SECTIONS:
                raise ConfigValidationError(
                    f"Unknown section '{section}'",
                    field=section,
                    constraint="unknown-section"
                )
            continue
        if "=" not in line:
            raise ConfigParseError("Expected 'key = value'", line=number, text=original)
        raw_key, value = (part.strip() for part in line.split("=", 1))
        if not raw_key or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)?", raw_key):
            raise ConfigParseError(f"Invalid key '{raw_key}'", line=number, text=original)

        key_section, key = _split_key(raw_key, section, number, original)
        if (key_section, key) in seen_at:
            raise ConfigParseError(
                f"Duplicate key '{key_section}.{key}' (first set on line {seen_at[(key_section, key)]})",
                line=number,
                text=original
            )
        seen_at[(key_section, key)] = number
        values[key_section][key] = value
    return values


def _error_field(loc: Tuple[Any, ...]) -> str:
    parts = [str(part) for part in loc]
    if not parts:
        return "experiment"
    if parts[0] in ("scene", "train"):
        return ".".join(parts)
    if parts[0] == "bs_subsets" and len(parts) > 1:
        return f"experiment.bs_subset_{parts[1]}"
    return "experiment." + ".".join(parts)


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Build an ExperimentConfig, turning the first pydantic error into a ConfigValidationError."""
    try:
        return ExperimentConfig.model_validate(data)
    except PydanticValidationError as exc:
        error = exc.errors()[0]
        field = _error_field(error["loc"])
        raise ConfigValidationError(
            f"Invalid value for {field}: {error['msg']}",
            field=field,
            constraint=error["type"],
            value=error.get("input")
        )


def parse_config_text(text: str) -> ExperimentConfig:
    raw = _raw_values(text)
    experiment: Dict[str, Any] = {}
    subsets: Dict[int, str] = {}
    for key, value in raw["experiment"].items():
        match = SUBSET_KEY.match(key)
        if match:
            subsets[int(match.group(1))] = value
        else:
            experiment[key] = value
    if subsets:
        experiment["bs_subsets"] = subsets
    return validate_config({"scene": raw["scene"], "train": raw["train"], **experiment})


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a configuration file; missing keys take their defaults."""
    try:
        text = read_text(path)
    except ArtifactIOError as exc:
        raise ConfigParseError(f"Cannot read configuration file {path}: {exc.message}")
    except UnicodeDecodeError:
        raise ConfigParseError(f"Configuration file {path} is not UTF-8 text")
    return parse_config_text(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(item) for item in value)
    return str(value)


def _section_lines(name: str, model: BaseModel, skip=()) -> list:
    lines = [f"[{name}]"]
    for key in type(model).model_fields:
        if key not in skip:
            lines.append(f"{key} = {_format_value(getattr(model, key))}")
    return lines


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical file form; parsing it back yields an equal config."""
    lines = ["# fingerprint active-learning experiment"]
    lines += _section_lines("scene", config.scene)
    lines.append("")
    lines += _section_lines("train", config.train)
    lines.append("")
    lines += _section_lines("experiment", config, skip=("scene", "train", "bs_subsets"))
    for count in sorted(config.bs_subsets):
        lines.append(f"bs_subset_{count} = {_format_value(config.bs_subsets[count])}")
    return "\n".join(lines) + "\n"


def override_config(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Apply command-line overrides (None values are ignored) and revalidate."""
    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return config
    return validate_config({**config.model_dump(), **updates})
