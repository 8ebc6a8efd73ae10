"""Sampled curves and their CSV representation.

CSV files start with one header line ``# columns: <x>(<unit>), <y>...`` and
carry every float at 17 significant digits, so a write/read cycle is exact.
Complex curves are written as ``<y>_re, <y>_im`` column pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PhysicsError

log = logging.getLogger(__name__)


@dataclass
class CoherenceCurve:
    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    x_name: str = "time"
    x_unit: str = "us"
    y_name: str = "coherence"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.times.shape != self.values.shape:
            raise PhysicsError("times and values differ in length")

    def __len__(self):
        return len(self.times)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_table(path, columns, rows):
    """Write a header line plus rows; strings pass through, numbers at 17 digits."""
    path = Path(path)
    lines = ["# columns: " + ", ".join(columns)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def export_curve(curve: CoherenceCurve, path) -> Path:
    if len(curve) == 0:
        log.warning("exporting empty curve to %s", path)
    x = f"{curve.x_name}({curve.x_unit})"
    if np.iscomplexobj(curve.values):
        cols = [x, f"{curve.y_name}_re", f"{curve.y_name}_im"]
        rows = zip(curve.times, curve.values.real, curve.values.imag)
    else:
        cols = [x, curve.y_name]
        rows = zip(curve.times, curve.values)
    return write_table(path, cols, rows)


def read_table(path):
    """Header column names and a float array (one row per data line)."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# columns:"):
        raise ValueError(f"{path}: missing '# columns:' header")
    cols = [c.strip() for c in text[0][len("# columns:"):].split(",")]
    data = [[float(v) for v in line.split(",")] for line in text[1:] if line.strip()]
    return cols, np.array(data, dtype=float).reshape(-1, len(cols))


def read_curve(path) -> CoherenceCurve:
    cols, data = read_table(path)
    xname, _, unit = cols[0].partition("(")
    unit = unit.rstrip(")")
    if len(cols) == 3 and cols[1].endswith("_re") and cols[2].endswith("_im"):
        values = data[:, 1] + 1j * data[:, 2]
        yname = cols[1][:-3]
    else:
        values = data[:, 1]
        yname = cols[1]
    return CoherenceCurve(data[:, 0], values, {}, xname, unit, yname)
