import struct

import numpy as np
import pytest

from loopgauge import snapshot
from loopgauge.snapshot import Kind

SHAPES = {
    Kind.SECTION: (5, 6, 8),
    Kind.ZERO_FORM: (5, 6, 7),
    Kind.ONE_FORM: (2, 5, 6, 7),
    Kind.THREE_FORM: (3, 2, 2, 2, 2, 2, 2, 35),
    Kind.FOUR_FORM: (4, 3, 35),
    Kind.SCALAR: (5, 6),
}


@pytest.mark.parametrize("kind", list(Kind))
def test_round_trip(tmp_path, rng, kind):
    field = rng.standard_normal(SHAPES[kind])
    path = tmp_path / f"{kind.name}.lgf"
    snapshot.write(path, field, kind)
    back, k = snapshot.read(path)
    assert k == kind
    assert back.shape == field.shape
    assert np.array_equal(back, field)


def test_header_layout(tmp_path):
    field = np.arange(2 * 3 * 4 * 7, dtype=float).reshape(2, 3, 4, 7)
    path = tmp_path / "t.lgf"
    snapshot.write(path, field, Kind.ONE_FORM)
    raw = path.read_bytes()
    head = struct.unpack_from("<4s11I", raw)
    # magic, version, n, seven size slots, components (2 slots x 7), kind
    assert head == (b"LGF1", 1, 2, 3, 4, 0, 0, 0, 0, 0, 14, int(Kind.ONE_FORM))
    payload = np.frombuffer(raw[48:], dtype="<f8")
    # first grid point: slot 0 fibre, then slot 1 fibre
    assert np.array_equal(payload[:7], field[0, 0, 0])
    assert np.array_equal(payload[7:14], field[1, 0, 0])
    assert len(raw) == 48 + 8 * field.size


def _valid(tmp_path):
    path = tmp_path / "v.lgf"
    snapshot.write(path, np.zeros((4, 4, 7)), Kind.ZERO_FORM)
    return path, bytearray(path.read_bytes())


def test_bad_magic(tmp_path):
    path, raw = _valid(tmp_path)
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="LGF1"):
        snapshot.read(path)


def test_bad_version(tmp_path):
    path, raw = _valid(tmp_path)
    struct.pack_into("<I", raw, 4, 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version"):
        snapshot.read(path)


def test_bad_slots(tmp_path):
    path, raw = _valid(tmp_path)
    struct.pack_into("<I", raw, 4 + 4 * 4, 9)  # fills slot beyond n
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="slots"):
        snapshot.read(path)


def test_truncated_payload(tmp_path):
    path, raw = _valid(tmp_path)
    path.write_bytes(bytes(raw[:-8]))
    with pytest.raises(ValueError, match="payload"):
        snapshot.read(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "h.lgf"
    path.write_bytes(b"LGF1\x01")
    with pytest.raises(ValueError):
        snapshot.read(path)


def test_shape_mismatch_rejected(tmp_path):
    with pytest.raises(ValueError):
        snapshot.write(tmp_path / "x.lgf", np.zeros((2,) * 9), Kind.ZERO_FORM)
