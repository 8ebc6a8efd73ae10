import logging

import numpy as np
import pytest

from cespin.curves import CoherenceCurve, export_curve, read_curve, read_table
from cespin.errors import PhysicsError


def test_three_points_give_header_plus_three_rows(tmp_path):
    path = export_curve(CoherenceCurve([0, 0.1, 0.2], [1.0, 0.9, 0.5]), tmp_path / "c.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "# columns: time(us), coherence"


def test_empty_curve_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        path = export_curve(CoherenceCurve([], []), tmp_path / "e.csv")
    assert path.read_text().splitlines() == ["# columns: time(us), coherence"]
    assert "empty" in caplog.text


def test_round_trip_is_bit_exact(tmp_path, rng):
    x = np.sort(rng.random(50))
    for y in (rng.normal(size=50), rng.normal(size=50) + 1j * rng.normal(size=50)):
        curve = read_curve(export_curve(CoherenceCurve(x, y), tmp_path / "r.csv"))
        assert np.array_equal(curve.times, x)
        assert np.array_equal(curve.values, y)


def test_units_and_names_survive(tmp_path):
    c = CoherenceCurve([1.0], [2.0], x_name="frequency", x_unit="MHz", y_name="signal")
    back = read_curve(export_curve(c, tmp_path / "n.csv"))
    assert (back.x_name, back.x_unit, back.y_name) == ("frequency", "MHz", "signal")


def test_shape_mismatch_and_missing_header(tmp_path):
    with pytest.raises(PhysicsError):
        CoherenceCurve([0, 1], [1])
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n")
    with pytest.raises(ValueError):
        read_table(bad)
