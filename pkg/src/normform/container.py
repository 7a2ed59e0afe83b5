"""Header + payload container shared by datasets, checkpoints and POD bases.

Layout::

    b"NORMFORM"                    8-byte magic
    uint64 little-endian           length of the JSON header in bytes
    JSON header (UTF-8)            user metadata plus an ``arrays`` table
    payloads                       column-major little-endian float64 arrays

Keys are sorted when the header is serialized, so identical inputs always
produce identical bytes.
"""

import hashlib
import json
import struct

import numpy as np

MAGIC = b"NORMFORM"
SCHEMA_VERSION = 1


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj):
    """SHA-256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_container(path, header, arrays):
    """Write ``arrays`` (name -> ndarray) with a JSON ``header`` to ``path``."""
    table = []
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = arr.tobytes(order="F")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    full = dict(header)
    full.setdefault("schema_version", SCHEMA_VERSION)
    full["arrays"] = table
    head = canonical_json(full).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in payloads:
            fh.write(raw)


def read_header(path):
    with open(path, "rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"{getattr(fh, 'name', 'file')} is not a normform container")
    (n,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(n).decode())
    return header, len(MAGIC) + 8 + n


def read_container(path):
    """Return ``(header, arrays)`` from a container written by :func:`write_container`."""
    with open(path, "rb") as fh:
        header, start = _read_header(fh)
        blob = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = flat.reshape(shape, order="F").astype(float)
    return header, arrays
