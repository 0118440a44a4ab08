"""LGF1 binary field snapshots.

Layout: b"LGF1", then little-endian u32 values
``version, n, size_0 .. size_6, c, kind``, then the float64 payload in
row-major order over the grid with the c components fastest.  A k-form with
fibre dimension m is stored with c = (number of form slots) * m, form slot
before fibre component.
"""

import struct
from enum import IntEnum

import numpy as np

MAGIC = b"LGF1"
VERSION = 1
_HEADER = struct.Struct("<4s11I")


class Kind(IntEnum):
    SECTION = 0  # loop-valued section (ambient components)
    ZERO_FORM = 1  # tangent-algebra valued function
    ONE_FORM = 2  # tangent-algebra valued 1-form, slot axis leading in memory
    THREE_FORM = 3  # 35 components of a 3-form
    FOUR_FORM = 4
    SCALAR = 5


def _to_payload(field, kind):
    field = np.asarray(field, dtype="<f8")
    if kind == Kind.ONE_FORM:
        # (n, *sizes, m) -> (*sizes, n, m)
        field = np.moveaxis(field, 0, -2)
        field = field.reshape(field.shape[:-2] + (-1,))
    elif kind == Kind.SCALAR:
        field = field[..., None]
    return np.ascontiguousarray(field)


def write(path, field, kind, n=None):
    kind = Kind(kind)
    field = np.asarray(field, dtype=float)
    if n is None:
        lead = field.ndim - (2 if kind == Kind.ONE_FORM else (0 if kind == Kind.SCALAR else 1))
        n = lead
    data = _to_payload(field, kind)
    sizes = data.shape[:-1]
    if len(sizes) != n or not 1 <= n <= 7:
        raise ValueError(f"field shape {field.shape} inconsistent with n={n}, kind={kind.name}")
    slots = list(sizes) + [0] * (7 - n)
    header = _HEADER.pack(MAGIC, VERSION, n, *slots, data.shape[-1], int(kind))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def read(path):
    """Returns (field, kind) with the in-memory layout used by the library."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated LGF1 header")
    magic, version, n, *rest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError("not an LGF1 file")
    if version != VERSION:
        raise ValueError(f"unsupported LGF1 version {version}")
    slots, c, kind = rest[:7], rest[7], Kind(rest[8])
    if not 1 <= n <= 7 or any(slots[n:]) or not all(slots[:n]):
        raise ValueError("corrupt LGF1 size slots")
    sizes = tuple(slots[:n])
    count = int(np.prod(sizes)) * c
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * count:
        raise ValueError(f"LGF1 payload has {len(payload)} bytes, expected {8 * count}")
    data = np.frombuffer(payload, dtype="<f8").astype(float).reshape(sizes + (c,))
    if kind == Kind.ONE_FORM:
        data = np.moveaxis(data.reshape(sizes + (n, c // n)), -2, 0)
    elif kind == Kind.SCALAR:
        data = data[..., 0]
    return data, kind
