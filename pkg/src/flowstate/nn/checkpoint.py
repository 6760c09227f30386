"""Single-file checkpoints: one JSON header line, then little-endian float64 data.

The header carries ``format``, ``version``, free-form model metadata and an
``arrays`` list of ``{"name", "shape"}`` entries; the payload holds the
arrays back to back in that order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError

FORMAT = "flowstate-checkpoint"
VERSION = 1


def save_checkpoint(path: Path | str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> Path:
    path = Path(path)
    header = {"format": FORMAT, "version": VERSION, **meta,
              "arrays": [{"name": n, "shape": list(np.shape(a))} for n, a in arrays]}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def load_checkpoint(path: Path | str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not a checkpoint ({exc})") from None
    if header.get("format") != FORMAT or "version" not in header:
        raise DataError(f"{path}: missing checkpoint format/version tag")
    if header["version"] != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header['version']}")
    data = np.frombuffer(payload, dtype="<f8")
    arrays, pos = {}, 0
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if pos + n > len(data):
            raise DataError(f"{path}: truncated payload")
        arrays[entry["name"]] = data[pos:pos + n].reshape(entry["shape"]).copy()
        pos += n
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes after payload")
    return header, arrays
