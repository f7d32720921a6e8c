"""Parameter checkpoints: a zip of ``.npy`` arrays with fixed timestamps.

Entries are written in sorted order with a constant modification date so
identical parameters always produce byte-identical files.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FORMAT = "hagcl-checkpoint-v1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": FORMAT, "meta": meta or {}}
    entries = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for name, arr in arrays.items():
        if name.startswith("__"):
            raise ValueError(f"reserved array name {name!r}")
        entries[name] = np.ascontiguousarray(arr, dtype=np.float64)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, entries[name], allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(arrays, meta)``; raise :class:`CheckpointError` on any defect."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {name: npz[name] for name in npz.files}
    except Exception as err:  # zip, header and array decoding all land here
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    raw = arrays.pop("__header__", None)
    if raw is None:
        raise CheckpointError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw.tobytes().decode())
    except ValueError:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r}")
    return arrays, header.get("meta", {})
