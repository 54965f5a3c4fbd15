import json
import os

from .configspace import ConfigSpace
from .errors import ValidationError


def _read_json(path):
    if not path or not os.path.exists(path):
        return None, f"File not found: {path}"
    if not path.endswith('.json'):
        return None, "Unsupported file format. Please use JSON."
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f), None
    except (OSError, json.JSONDecodeError) as e:
        return None, f"Could not read {path}: {e}"


def load_space(path):
    """
    Loads a configuration space document.
    Returns (ConfigSpace, None) or (None, error message).
    """
    document, error = _read_json(path)
    if error:
        return None, error
    if not isinstance(document, dict):
        return None, "Space file must hold a JSON object with a 'parameters' list"
    try:
        space = ConfigSpace.from_dict(document)
    except (ValidationError, TypeError) as e:
        return None, f"Invalid space file: {e}"
    if len(space) == 0:
        return None, "Space file declares no parameters"
    return space, None


def load_config(path, space):
    """
    Loads a configuration (JSON map name -> value) and validates it against the space.
    Returns (Configuration, None) or (None, error message).
    """
    document, error = _read_json(path)
    if error:
        return None, error
    if not isinstance(document, dict):
        return None, "Configuration file must hold a JSON object"

    # best_config.json wraps the values
    values = document.get('values', document) if isinstance(document.get('values'), dict) else document
    try:
        return space.make_config(values), None
    except ValidationError as e:
        return None, f"Invalid configuration: {e}"


def load_env_override(path):
    """
    Loads a simulated-environment override document.
    Returns (dict, None) or (None, error message).
    """
    document, error = _read_json(path)
    if error:
        return None, error
    if not isinstance(document, dict):
        return None, "Environment override must be a JSON object"
    allowed = {'scale', 'direction', 'population', 'regions', 'crash_regions'}
    unknown = sorted(set(document) - allowed)
    if unknown:
        return None, f"Unknown override fields: {unknown}"
    return document, None
