"""Snapshot file format round trips and validation."""

import numpy as np
import pytest

from _support import make_grid, random_fieldset
from rbnudge.errors import ConfigurationError, MissingInputError
from rbnudge.snapshots import read_snapshot, write_snapshot

RNG = np.random.default_rng(3)


def test_round_trip_is_exact(tmp_path):
    g = make_grid(n_x=10, n_y=6, l_x=2.5)
    fs = random_fieldset(g, RNG, divfree=False)
    fs = type(fs)(u=fs.u, v=fs.v, theta=fs.theta, pressure=fs.pressure,
                  time=1.375)
    path = tmp_path / "state.rbsnap"
    write_snapshot(path, fs)
    back = read_snapshot(path)
    assert back.grid == g
    assert back.time == 1.375
    assert np.array_equal(back.u.values, fs.u.values)
    assert np.array_equal(back.v.values, fs.v.values)
    assert np.array_equal(back.theta.values, fs.theta.values)
    assert np.array_equal(back.pressure.values, fs.pressure.values)


def test_grid_check_on_read(tmp_path):
    g = make_grid(n_x=10, n_y=6, l_x=2.5)
    path = tmp_path / "state.rbsnap"
    write_snapshot(path, random_fieldset(g, RNG))
    read_snapshot(path, grid=g)
    with pytest.raises(ConfigurationError, match="does not match"):
        read_snapshot(path, grid=make_grid(n_x=12, n_y=6, l_x=2.5))


def test_write_is_deterministic(tmp_path):
    g = make_grid()
    fs = random_fieldset(g, np.random.default_rng(0))
    a, b = tmp_path / "a.rbsnap", tmp_path / "b.rbsnap"
    write_snapshot(a, fs)
    write_snapshot(b, fs)
    assert a.read_bytes() == b.read_bytes()


def test_error_paths(tmp_path):
    with pytest.raises(MissingInputError):
        read_snapshot(tmp_path / "absent.rbsnap")
    bad = tmp_path / "bad.rbsnap"
    bad.write_bytes(b"WRONGMAG" + b"\x00" * 64)
    with pytest.raises(ConfigurationError, match="not a snapshot"):
        read_snapshot(bad)
    g = make_grid()
    path = tmp_path / "t.rbsnap"
    write_snapshot(path, random_fieldset(g, RNG))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(ConfigurationError, match="truncated"):
        read_snapshot(path)
    path.write_bytes(raw + b"\x00\x00")
    with pytest.raises(ConfigurationError, match="trailing"):
        read_snapshot(path)
