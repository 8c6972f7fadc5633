import struct

import numpy as np
import pytest

from abimhd.fields import FieldDataError, GridSpec
from abimhd.snapshots import (
    format_float,
    read_snapshot,
    write_csv,
    write_snapshot,
)


def test_roundtrip(tmp_path, rng):
    g = GridSpec(8)
    comps = [rng.standard_normal(g.shape) for _ in range(4)]
    path = tmp_path / "state.abim"
    write_snapshot(path, g, comps)
    g2, out = read_snapshot(path)
    assert g2 == g
    for a, b in zip(comps, out):
        assert np.array_equal(a, b)


def test_header_layout(tmp_path):
    g = GridSpec(4)
    path = tmp_path / "one.abim"
    write_snapshot(path, g, [np.zeros(g.shape)])
    raw = path.read_bytes()
    assert raw[:4] == b"ABIM"
    assert raw[4] == 1
    assert struct.unpack("<III", raw[5:17]) == (4, 4, 4)
    assert struct.unpack("<H", raw[17:19]) == (1,)
    assert len(raw) == 19 + 8 * 64


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.abim"
    path.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(FieldDataError, match="magic"):
        read_snapshot(path)


def test_truncated_rejected(tmp_path):
    g = GridSpec(4)
    path = tmp_path / "short.abim"
    write_snapshot(path, g, [np.zeros(g.shape)])
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FieldDataError, match="truncated"):
        read_snapshot(path)


def test_csv_roundtrip_precision(tmp_path):
    vals = [1.0 / 3.0, np.pi, 1e-17, -2.0 ** 52 + 0.5]
    path = tmp_path / "out.csv"
    write_csv(path, ("a", "b", "c", "d"), [vals], ("# footer",))
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b,c,d"
    parsed = [float(x) for x in lines[1].split(",")]
    assert parsed == vals
    assert lines[2] == "# footer"


def test_format_float_17_digits():
    assert float(format_float(np.pi)) == np.pi
