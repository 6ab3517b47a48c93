import json
import logging
import tomllib
from pathlib import Path
from typing import Any, Dict, Type, TypeVar, Union

import pydantic
from pydantic import BaseModel

from src.particle_tracer.exceptions import ConfigError, TracerError

logger = logging.getLogger(__name__)

ModelT = TypeVar('ModelT', bound=BaseModel)


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Reads a JSON or TOML file (chosen by suffix) into a dict.

    Raises:
        OSError: The file cannot be read.
        ConfigError: The content is not valid JSON/TOML or not a table at top level.
    """
    path = Path(path)
    text = path.read_text(encoding='utf-8')
    try:
        data = tomllib.loads(text) if path.suffix.lower() == '.toml' else json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        logger.error(f"Failed to parse {path}: {e}")
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object at top level, got {type(data).__name__}")
    return data


def validation_message(error: pydantic.ValidationError) -> str:
    """One line per failing field, naming the key path."""
    lines = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{where}: {item['msg']}")
    return "; ".join(lines)


def parse_model(model: Type[ModelT], data: Dict[str, Any], source: str = "",
                error_type: Type[TracerError] = ConfigError) -> ModelT:
    """Validates ``data`` into ``model``, re-raising validation failures as ``error_type``."""
    try:
        return model.model_validate(data)
    except pydantic.ValidationError as e:
        message = validation_message(e)
        logger.error(f"Invalid {model.__name__} {source}: {message}")
        raise error_type(f"{source + ': ' if source else ''}{message}") from e


def load_model(model: Type[ModelT], path: Union[str, Path],
               error_type: Type[TracerError] = ConfigError) -> ModelT:
    return parse_model(model, read_config_file(path), str(path), error_type)
