"""Pseudofermion GP Sampler Utility Functions.

This module provides helper functions.

Features:
- Serializing Pydantic models, lists, and dictionaries to JSON (`dump_json`).
- Writing models to files (`write_json`).
- Parsing `key=value` overrides and merging dotted keys into nested mappings.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import json
from pathlib import Path
from typing import Any, Mapping, Union
from pydantic import BaseModel
from pydantic_core import to_json


def dump_json(maybe_model: Union[BaseModel, list, dict, None], indent: Union[int, None] = None) -> str:
    """Serializes a Pydantic model, list, or dictionary to a JSON string.

    Floats are written in their shortest round-trip form.

    Args:
        maybe_model (Union[BaseModel, list, dict, None]): The object to serialize.
        indent (Union[int, None]): Indentation for pretty output, compact when None.

    Returns:
        str: A JSON string representation of the input, or an empty string if None
        is provided.
    """
    if maybe_model is None:
        return ""
    elif isinstance(maybe_model, (list, dict)):
        return to_json(maybe_model, indent=indent).decode()
    else:
        return maybe_model.model_dump_json(by_alias=True, exclude_unset=indent is None, indent=indent)


def write_json(path: Path, model: Union[BaseModel, list, dict]) -> Path:
    """Writes `model` as indented JSON to `path`, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, BaseModel):
        text = model.model_dump_json(indent=2)
    else:
        text = dump_json(model, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def parse_value(text: str) -> Any:
    """Parses an override value as JSON, falling back to the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def merge_dotted(tree: dict, key: str, value: Any) -> dict:
    """Sets `tree[a][b]...[z] = value` for the dotted key `a.b...z`, creating sections."""
    *sections, leaf = key.split(".")
    node = tree
    for section in sections:
        child = node.get(section)
        if not isinstance(child, dict):
            child = node[section] = {}
        node = child
    node[leaf] = value
    return tree


def apply_overrides(tree: dict, overrides: Mapping[str, str]) -> dict:
    """Merges `key=value` overrides with dotted keys into a copy of a nested mapping."""
    merged = json.loads(json.dumps(tree))
    for key, text in overrides.items():
        merge_dotted(merged, key, parse_value(text))
    return merged
