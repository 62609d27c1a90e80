"""Checkpoint directories: metadata.json plus one raw little-endian float32
file per named array, row-major. Shared by the motion codec and the LM."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError


def save_arrays(ckpt_dir: str | Path, metadata: dict, arrays: dict[str, np.ndarray]) -> None:
    out = Path(ckpt_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f4")
        shapes[name] = list(arr.shape)
        # tobytes always serializes in C order.
        (out / f"{name}.f32").write_bytes(arr.tobytes())
    meta = dict(metadata)
    meta["arrays"] = shapes
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def load_arrays(ckpt_dir: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    root = Path(ckpt_dir)
    meta_path = root / "metadata.json"
    if not meta_path.exists():
        raise CheckpointFormatError(f"no metadata.json under {root}")
    try:
        meta = json.loads(meta_path.read_text())
        shapes = meta["arrays"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise CheckpointFormatError(f"malformed metadata: {exc}") from exc

    arrays = {}
    for name, shape in shapes.items():
        path = root / f"{name}.f32"
        if not path.exists():
            raise CheckpointFormatError(f"missing array file {path.name}")
        blob = path.read_bytes()
        expected = int(np.prod(shape)) * 4
        if len(blob) != expected:
            raise CheckpointFormatError(
                f"{path.name}: {len(blob)} bytes, metadata says {expected}")
        arrays[name] = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
    return meta, arrays
