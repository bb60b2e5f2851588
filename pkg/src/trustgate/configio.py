"""Config file loading shared by the CLIs (TOML or JSON, by extension)."""

from __future__ import annotations

import json
from typing import Any, Dict

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


def load_config_file(path: str) -> Dict[str, Any]:
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a table/object: {path}")
    return data


def parse_addr(addr: str) -> tuple:
    """Split `host:port` (scheme prefix tolerated) into (host, port)."""
    value = addr.strip()
    for scheme in ("http://", "https://"):
        if value.startswith(scheme):
            value = value[len(scheme):]
            break
    value = value.rstrip("/")
    host, _, port_text = value.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValueError(f"expected host:port, got {addr!r}")
    return host, int(port_text)
