"""Regenerate ``src/cespin/data/yag.crystal`` from the Ia-3d symmetry operations.

Run once by hand; the output is committed.  Oxygen (96h) is generated only to
assign the local frame of each dodecahedral site and is not written out.
"""

import itertools
import re
from fractions import Fraction
from pathlib import Path

import numpy as np

# General positions of Ia-3d (No. 230), origin choice at -3; the second 24
# are the inversions of the first 24 and the I-centring is added below.
OPS = (
    "x,y,z;-x+1/2,-y,z+1/2;-x,y+1/2,-z+1/2;x+1/2,-y+1/2,-z;"
    "z,x,y;z+1/2,-x+1/2,-y;-z+1/2,-x,y+1/2;-z,x+1/2,-y+1/2;"
    "y,z,x;-y,z+1/2,-x+1/2;y+1/2,-z+1/2,-x;-y+1/2,-z,x+1/2;"
    "y+3/4,x+1/4,-z+1/4;-y+3/4,-x+3/4,-z+3/4;y+1/4,-x+1/4,z+3/4;-y+1/4,x+3/4,z+1/4;"
    "x+3/4,z+1/4,-y+1/4;-x+1/4,z+3/4,y+1/4;-x+3/4,-z+3/4,-y+3/4;x+1/4,-z+1/4,y+3/4;"
    "z+3/4,y+1/4,-x+1/4;z+1/4,-y+1/4,x+3/4;-z+1/4,y+3/4,x+1/4;-z+3/4,-y+3/4,-x+3/4"
)

LATTICE_CONSTANT = 1.2008  # nm
OXYGEN_96H = (-0.0306, 0.0512, 0.1500)

# Local frames of the dodecahedral site: (z axis, x axis); y = z cross x.
FRAMES = (
    ((0, 0, 1), (1, -1, 0)),
    ((0, 0, 1), (1, 1, 0)),
    ((1, 0, 0), (0, 1, 1)),
    ((1, 0, 0), (0, 1, -1)),
    ((0, 1, 0), (1, 0, 1)),
    ((0, 1, 0), (-1, 0, 1)),
)


def parse_ops():
    ops = []
    for op in OPS.split(";"):
        rot = np.zeros((3, 3))
        shift = np.zeros(3)
        for i, expr in enumerate(op.split(",")):
            for sign, var in re.findall(r"([+-]?)([xyz])", expr):
                rot[i, "xyz".index(var)] = -1.0 if sign == "-" else 1.0
            m = re.search(r"([+-]?\d/\d)", expr)
            if m:
                shift[i] = float(Fraction(m.group(1)))
        ops.append((rot, shift))
    return ops + [(-r, -s) for r, s in ops]


def orbit(ops, point):
    found = []
    for rot, shift in ops:
        for centring in (np.zeros(3), np.full(3, 0.5)):
            q = (rot @ point + shift + centring) % 1.0
            q[np.isclose(q, 1.0)] = 0.0
            if not any(np.allclose(q, f, atol=1e-6) for f in found):
                found.append(q)
    return sorted(found, key=tuple)


def site_symmetry_axes(ops, point):
    axes = []
    for rot, shift in ops:
        for centring in (np.zeros(3), np.full(3, 0.5)):
            d = rot @ point + shift + centring - point
            if np.allclose(d, np.round(d), atol=1e-9) and np.isclose(np.trace(rot), -1):
                w, v = np.linalg.eig(rot)
                axes.append(np.real(v[:, np.argmin(abs(w - 1))]))
    return axes


def assign_frame(ops, point, oxygens):
    axes = site_symmetry_axes(ops, point)
    cubic = [a for a in axes if np.isclose(np.abs(a).max(), 1.0)]
    assert len(cubic) == 1 and len(axes) == 3
    zaxis = np.abs(cubic[0])
    a = LATTICE_CONSTANT
    near = []
    for o in oxygens:
        for im in itertools.product((-1, 0, 1), repeat=3):
            r = (o + np.array(im) - point) * a
            if np.linalg.norm(r) < 0.237:
                near.append(r)
    assert len(near) == 4
    # convention: local x is the diagonal two-fold axis with the larger
    # projection of the four short-bond oxygens
    best = None
    for k, (z, x) in enumerate(FRAMES):
        if not np.allclose(z, zaxis):
            continue
        xa = np.array(x) / np.linalg.norm(x)
        score = sum((xa @ r) ** 2 for r in near)
        if best is None or score > best[1]:
            best = (k, score)
    return best[0]


def main():
    ops = parse_ops()
    octa = orbit(ops, np.zeros(3))
    dode = orbit(ops, np.array([1 / 8, 0, 1 / 4]))
    tetra = orbit(ops, np.array([3 / 8, 0, 1 / 4]))
    oxy = orbit(ops, np.array(OXYGEN_96H))
    assert (len(octa), len(dode), len(tetra), len(oxy)) == (16, 24, 24, 96)

    def fmt(v):
        return " ".join(f"{x:.3f}".rstrip("0").rstrip(".") or "0" for x in v)

    lines = [
        "# Yttrium aluminium garnet, Y3Al5O12, space group Ia-3d (No. 230).",
        "# Generated by tools/make_yag_data.py from the standard Wyckoff positions",
        "# 16a (Al, octahedral), 24d (Al, tetrahedral), 24c (Y, dodecahedral).",
        "# Oxygen (96h) carries no nuclear spin in natural abundance and is omitted.",
        "",
        "[lattice]",
        "name = YAG",
        f"lattice_constant = {LATTICE_CONSTANT}   # nm",
        "",
        "[species]",
        "# name  spin  gyromagnetic ratio (MHz/mT, or mu=<moment in nuclear magnetons>)  abundance",
        "Al27  5/2  mu=3.64  1.0",
        "Y89   1/2  mu=-0.1374  1.0",
        "",
        "[sites]",
        "# species  class  fx fy fz  [frame index for dodecahedral sites]",
    ]
    lines += [f"Al27 octahedral {fmt(p)}" for p in octa]
    lines += [f"Al27 tetrahedral {fmt(p)}" for p in tetra]
    lines += [f"Y89 dodecahedral {fmt(p)} {assign_frame(ops, p, oxy)}" for p in dode]
    out = Path(__file__).resolve().parents[1] / "src" / "cespin" / "data" / "yag.crystal"
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
