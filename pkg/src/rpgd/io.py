"""On-disk formats.

Arrays are raw little-endian float64 with a JSON sidecar ``<file>.json``
holding the shape and any metadata (angles, pixel size).  Images can also be
written as 16-bit binary PGM with linear windowing.
"""

from __future__ import annotations

import json
import os
import re

import numpy as np


def save_array(path, arr, **meta):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"refusing to write non-finite values to {path}")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = {"shape": list(arr.shape), "dtype": "<f8", **meta}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_array(path):
    """Returns (array, metadata)."""
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype="<f8")
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {data.size} values, sidecar says shape {shape}")
    return data.reshape(shape), meta


def save_pgm(path, img, lo=None, hi=None):
    img = np.asarray(img, dtype=np.float64)
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.round((img - lo) / span * 65535.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def load_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval, then exactly one whitespace byte
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=m.end()).reshape(h, w)


def write_json(path, obj):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)
