"""Single-file checkpoints.

Layout::

    b"STRUCGRAD-CKPT\\n"
    8-byte little-endian header length
    UTF-8 JSON header (architecture descriptor, segment tables, extras)
    theta values, then phi values, as little-endian float64

The header lists every segment with its shape and byte offset so the file
can be read without this package.
"""

import json
import struct

import numpy as np

from .tensor import Layout, ParamVector

MAGIC = b"STRUCGRAD-CKPT\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    """Raised for unreadable or inconsistent checkpoint files."""


def _segment_table(layout, base):
    return [{"name": s.name, "shape": list(s.shape),
             "offset": base + s.offset * _DTYPE.itemsize, "count": s.size}
            for s in layout.segments]


def encode(descriptor, theta, phi, extra=None):
    """Serialise parameters and metadata to bytes."""
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "float64-le",
        "descriptor": descriptor,
        "theta": _segment_table(theta.layout, 0),
        "phi": _segment_table(phi.layout, theta.layout.size * _DTYPE.itemsize),
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.concatenate([theta.values, phi.values]).astype(_DTYPE).tobytes()
    return MAGIC + struct.pack("<Q", len(raw)) + raw + body


def decode(blob):
    """Inverse of :func:`encode`; returns ``(descriptor, theta, phi, extra)``."""
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(blob[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')!r}")
    data = np.frombuffer(blob[pos + n:], dtype=_DTYPE)

    def read(table):
        layout = Layout([(s["name"], tuple(s["shape"])) for s in table])
        if not table:
            return ParamVector(layout)
        start = table[0]["offset"] // _DTYPE.itemsize
        if start + layout.size > data.size:
            raise CheckpointError("checkpoint data shorter than its segment table")
        return ParamVector(layout, data[start:start + layout.size])

    theta, phi = read(header["theta"]), read(header["phi"])
    if data.size != theta.layout.size + phi.layout.size:
        raise CheckpointError("checkpoint data length does not match its segment table")
    return header["descriptor"], theta, phi, header.get("extra", {})


def save(path, descriptor, theta, phi, extra=None):
    with open(path, "wb") as fh:
        fh.write(encode(descriptor, theta, phi, extra))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
