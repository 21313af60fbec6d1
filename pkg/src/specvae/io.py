"""Named-array directory container: manifest.json + one raw file per array.

Raw files are little-endian IEEE-754 float32, so the format is language
neutral and round trips bit-exactly for float32 payloads. Integer arrays are
stored as float32 (values used here are small integers, exact in float32)
and cast back on load according to the manifest dtype.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"

_DTYPES = {"float32": np.float32, "int64": np.int64, "int32": np.int32}


class ContainerError(ValueError):
    """Raised for malformed or inconsistent container directories."""


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"arrays": {}, "meta": meta or {}}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise ContainerError(f"unsupported dtype {arr.dtype} for array {name!r}")
        manifest["arrays"][name] = {"shape": list(arr.shape), "dtype": arr.dtype.name}
        payload = arr.astype("<f4")
        (path / f"{name}.raw").write_bytes(payload.tobytes())
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise ContainerError(f"no {MANIFEST_NAME} in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"malformed manifest: {exc}") from exc

    arrays: dict[str, np.ndarray] = {}
    for name, info in manifest.get("arrays", {}).items():
        shape = tuple(info["shape"])
        expected = int(np.prod(shape)) * 4
        raw = (path / f"{name}.raw").read_bytes()
        if len(raw) != expected:
            raise ContainerError(
                f"array {name!r}: payload is {len(raw)} bytes, expected {expected}"
                f" (truncated at offset {len(raw)})"
            )
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        arrays[name] = arr.astype(_DTYPES[info["dtype"]])
    return arrays, manifest.get("meta", {})
