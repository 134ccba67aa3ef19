"""model.json persistence shared by the counting and segmentation models.

Floats are written with repr-exact decimal serialization, so a saved model
reloads bit-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError

_KINDS = ("counter", "segmenter")


def save_model(path, kind: str, r: int, d: int, params: dict[str, np.ndarray],
               history: list[float], fingerprint: str | None = None) -> None:
    if kind not in _KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    doc = {
        "version": 1,
        "kind": kind,
        "r": int(r),
        "d": int(d),
        "params": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
            for name, arr in sorted(params.items())
        },
        "history": [float(v) for v in history],
    }
    if fingerprint is not None:
        doc["fingerprint"] = fingerprint
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_model(path):
    """Returns (kind, r, d, params, history, fingerprint)."""
    path = Path(path)
    if not path.exists():
        raise ParseError(path, "model.json", "file not found")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(path, "json", f"{e.msg} at offset {e.pos}") from e
    if not isinstance(doc, dict):
        raise ParseError(path, "root", "expected a JSON object")
    if doc.get("version") != 1:
        raise ParseError(path, "version", f"unsupported version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise ParseError(path, "kind", f"expected one of {_KINDS}, got {kind!r}")
    r = doc.get("r")
    d = doc.get("d")
    if not isinstance(r, int) or not isinstance(d, int):
        raise ParseError(path, "r/d", "expected integers")
    raw = doc.get("params")
    if not isinstance(raw, dict):
        raise ParseError(path, "params", "expected an object")
    params: dict[str, np.ndarray] = {}
    for name, entry in raw.items():
        if not isinstance(entry, dict) or "shape" not in entry or "data" not in entry:
            raise ParseError(path, f"params.{name}", "expected {shape, data}")
        shape = entry["shape"]
        data = entry["data"]
        arr = np.asarray(data, dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise ParseError(
                path, f"params.{name}.data", f"expected {int(np.prod(shape))} values, got {arr.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise ParseError(path, f"params.{name}.data", "non-finite parameter value")
        params[name] = arr.reshape(shape)
    history = doc.get("history", [])
    if not isinstance(history, list):
        raise ParseError(path, "history", "expected a list")
    return kind, r, d, params, [float(v) for v in history], doc.get("fingerprint")
