"""Canonical JSON reports: serialization, schema validation, atomic writes.

JSON is emitted with sorted keys and repr-style floats (shortest round-trip
form); infinities are mapped to strings so documents stay standard JSON.
Writes go through a temp file in the target directory followed by an atomic
rename.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from importlib import resources


def _sanitize(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def dumps(document: dict) -> str:
    return json.dumps(_sanitize(document), sort_keys=True, indent=2)


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, document: dict) -> None:
    write_atomic(path, dumps(document) + "\n")


def load_schema(name: str) -> dict:
    ref = resources.files("sepsr").joinpath(f"schemas/{name}.schema.json")
    return json.loads(ref.read_text())


def validate(document: dict, schema_name: str) -> None:
    """Validate against a packaged schema (no-op when jsonschema is absent)."""
    try:
        import jsonschema
    except ImportError:  # pragma: no cover - test extra not installed
        return
    jsonschema.validate(_sanitize(document), load_schema(schema_name))
