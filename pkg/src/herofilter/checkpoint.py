"""Binary model checkpoints.

Layout (all integers little-endian)::

    bytes 0..7     magic b"HFCKPT01"
    bytes 8..15    uint64 L, length of the JSON header in bytes
    next L bytes   UTF-8 JSON header
    remainder      float64 little-endian payload, arrays back to back

The header holds ``config`` (mixer hyperparameters), ``seeds``, free-form
``meta`` and ``arrays``: a list of ``{"name", "shape", "offset"}``
records, where ``offset`` counts float64 elements from the payload start
and arrays are C-ordered. Parameter arrays are named as in
``MixerModel.params``. Patch data, when present, is stored as
``patch.indices`` (integers held exactly in float64) and ``patch.scores``.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .mixer import MixerModel
from .patcher import PatchSet

MAGIC = b"HFCKPT01"


def save_checkpoint(path, model: MixerModel, ps: PatchSet | None = None,
                    meta: dict | None = None) -> None:
    arrays = dict(model.params)
    if ps is not None:
        arrays["patch.indices"] = ps.indices.astype(np.float64)
        arrays["patch.scores"] = ps.scores
    records, offset = [], 0
    for name, arr in arrays.items():
        records.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += int(arr.size)
    header = {
        "format": 1,
        "config": model.config(),
        "seeds": {"init": model.seed},
        "patch_mode": ps.mode if ps is not None else None,
        "meta": meta or {},
        "arrays": records,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return (model, patch_set or None, header)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC or len(raw) < 16:
        raise FormatError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    payload = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    arrays = {}
    for rec in header["arrays"]:
        size = int(np.prod(rec["shape"], dtype=np.int64))
        start = rec["offset"]
        if start + size > payload.size:
            raise FormatError(f"truncated checkpoint at array {rec['name']!r}")
        arrays[rec["name"]] = payload[start:start + size].astype(np.float64).reshape(rec["shape"])
    ps = None
    if "patch.indices" in arrays:
        ps = PatchSet(arrays.pop("patch.indices").astype(np.int64), arrays.pop("patch.scores"),
                      header.get("patch_mode") or "spectral")
    model = MixerModel(arrays, **header["config"])
    return model, ps, header
