"""
Encoding helpers for float64 arrays in JSON documents.

Checkpoints store parameters as base64 of little-endian float64 so that round trips are
bit-exact; trajectories use plain JSON numbers (shortest round-trip repr).
"""

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np


def encode_float64(values: np.ndarray) -> str:
    """
    Encode an array as base64 of its little-endian float64 bytes.

    Args:
        values (np.ndarray): Any-shaped numeric array; flattened row-major.

    Returns:
        str: ASCII base64 payload.
    """
    raw = np.ascontiguousarray(values, dtype="<f8").reshape(-1).tobytes()
    return base64.b64encode(raw).decode("ascii")


def decode_float64(payload: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """
    Decode a payload produced by encode_float64.

    Args:
        payload (str): base64 text.
        shape (tuple[int, ...], optional): Target shape; flat when omitted.

    Returns:
        np.ndarray: float64 array (a fresh, writable copy).

    Raises:
        ValueError: If the payload length does not match the requested shape.
    """
    flat = np.frombuffer(base64.b64decode(payload.encode("ascii")), dtype="<f8").astype(np.float64)
    if shape is None:
        return flat
    return flat.reshape(shape)


def dump_json(document: Any, path: Path) -> None:
    """Write a JSON document with sorted keys so reruns produce identical bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path: Path) -> Any:
    """Read a JSON document."""
    return json.loads(path.read_text(encoding="utf-8"))
