"""Crystal description, nuclear bath generation and Ce site frames.

The crystal file is plain text with three sections::

    [lattice]
    name = YAG
    lattice_constant = 1.2008          # nm

    [species]
    # name  spin  gyromagnetic ratio  abundance
    Al27  5/2  mu=3.64  1.0            # mu= : moment in nuclear magnetons
    Y89   1/2  -0.0020946  1.0         # plain number: MHz/mT

    [sites]
    # species  class  fx fy fz  [frame]
    Al27 octahedral 0 0 0
    Y89 dodecahedral 0.125 0 0.25 3

``class`` is one of ``octahedral``, ``tetrahedral``, ``dodecahedral``.  The
optional trailing integer on dodecahedral rows labels which of the six local
Ce frames (see :data:`FRAME_AXES`) the site carries.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .constants import BOHR_MAGNETON, NUCLEAR_MAGNETON
from .errors import CrystalSpecError, MemoryBudgetError, PhysicsError

SITE_CLASSES = ("octahedral", "tetrahedral", "dodecahedral")

#: Minimum separation between two bath spins, nm.
MIN_SEPARATION = 0.05

#: (local z, local x) of the six magnetically inequivalent dodecahedral
#: frames in cubic crystal coordinates.  Local y completes a right-handed set.
FRAME_AXES = (
    ((0, 0, 1), (1, -1, 0)),
    ((0, 0, 1), (1, 1, 0)),
    ((1, 0, 0), (0, 1, 1)),
    ((1, 0, 0), (0, 1, -1)),
    ((0, 1, 0), (1, 0, 1)),
    ((0, 1, 0), (-1, 0, 1)),
)

#: ODMR resonances (MHz) of the three distinct site families for B along
#: [110], in the order (local y along B, local x along B, remaining four).
DEFAULT_RESONANCES = (650.0, 1310.0, 1550.0)
DEFAULT_CALIBRATION_FIELD = 49.0  # mT
DEFAULT_FIELD_DIRECTION = (1.0, 1.0, 0.0)


@dataclass(frozen=True)
class SpinSpecies:
    name: str
    spin: float
    gyromagnetic_ratio: float  # MHz/mT, signed
    abundance: float = 1.0

    def __post_init__(self):
        twice = 2 * self.spin
        if self.spin <= 0 or abs(twice - round(twice)) > 1e-12:
            raise CrystalSpecError(f"{self.name}: spin must be a positive half-integer, got {self.spin}")
        if not 0.0 <= self.abundance <= 1.0:
            raise CrystalSpecError(f"{self.name}: abundance {self.abundance} outside [0, 1]")

    @property
    def multiplicity(self) -> int:
        return int(round(2 * self.spin)) + 1

    @classmethod
    def from_moment(cls, name, spin, moment, abundance=1.0):
        """Species whose gyromagnetic ratio follows from mu / (I h); ``moment`` in nuclear magnetons."""
        return cls(name, spin, moment * NUCLEAR_MAGNETON / spin, abundance)


@dataclass(frozen=True)
class Site:
    fractional: tuple
    species: str
    site_class: str
    frame: int | None = None


@dataclass(frozen=True)
class CrystalSpec:
    lattice_constant: float  # nm, cubic cell
    sites: tuple
    species_table: dict
    name: str = ""

    def __post_init__(self):
        if not self.lattice_constant > 0:
            raise CrystalSpecError("lattice_constant must be positive")
        if not self.sites:
            raise CrystalSpecError("crystal has an empty site list")
        for s in self.sites:
            if s.species not in self.species_table:
                raise CrystalSpecError(f"site species {s.species!r} not in species table")
            if s.site_class not in SITE_CLASSES:
                raise CrystalSpecError(f"unknown site class {s.site_class!r}")
            f = np.asarray(s.fractional, dtype=float)
            if f.shape != (3,) or np.any(f < 0) or np.any(f >= 1):
                raise CrystalSpecError(f"fractional coordinates {s.fractional} outside [0, 1)")
            if s.frame is not None and not 0 <= s.frame < len(FRAME_AXES):
                raise CrystalSpecError(f"frame index {s.frame} out of range")

    @property
    def cell_volume(self) -> float:
        return self.lattice_constant ** 3

    @property
    def metadata(self) -> dict:
        counts = {}
        for s in self.sites:
            key = f"{s.species}/{s.site_class}"
            counts[key] = counts.get(key, 0) + 1
        return {
            "name": self.name,
            "lattice_constant_nm": self.lattice_constant,
            "cell_volume_nm3": self.cell_volume,
            "site_counts": counts,
        }

    def fractional_array(self, species=None, site_class=None):
        rows = [s for s in self.sites
                if (species is None or s.species in species)
                and (site_class is None or s.site_class == site_class)]
        return np.array([s.fractional for s in rows], dtype=float).reshape(-1, 3), rows


def _parse_number(text):
    return float(Fraction(text)) if "/" in text else float(text)


def parse_crystal_spec(text: str) -> CrystalSpec:
    section = None
    lattice = {}
    species = {}
    sites = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            section = m.group(1)
            if section not in ("lattice", "species", "sites"):
                raise CrystalSpecError(f"line {lineno}: unknown section [{section}]")
            continue
        try:
            if section == "lattice":
                key, _, value = line.partition("=")
                if not _:
                    raise ValueError("expected key = value")
                lattice[key.strip()] = value.strip()
            elif section == "species":
                name, spin, gamma, abundance = line.split()
                spin = _parse_number(spin)
                abundance = float(abundance)
                if gamma.startswith("mu="):
                    sp = SpinSpecies.from_moment(name, spin, float(gamma[3:]), abundance)
                else:
                    sp = SpinSpecies(name, spin, float(gamma), abundance)
                species[name] = sp
            elif section == "sites":
                parts = line.split()
                if len(parts) not in (5, 6):
                    raise ValueError("expected: species class fx fy fz [frame]")
                frac = tuple(_parse_number(p) for p in parts[2:5])
                frame = int(parts[5]) if len(parts) == 6 else None
                sites.append(Site(frac, parts[0], parts[1], frame))
            else:
                raise ValueError("content outside a section")
        except (ValueError, ZeroDivisionError) as exc:
            raise CrystalSpecError(f"line {lineno}: {exc}: {raw.strip()!r}") from None
    if "lattice_constant" not in lattice:
        raise CrystalSpecError("[lattice] section lacks lattice_constant")
    try:
        a = float(lattice["lattice_constant"])
    except ValueError:
        raise CrystalSpecError("lattice_constant is not a number") from None
    return CrystalSpec(a, tuple(sites), species, lattice.get("name", ""))


def load_crystal_spec(path) -> CrystalSpec:
    """Read and validate a crystal file.  ``builtin:yag`` selects the shipped YAG data."""
    if str(path).startswith("builtin:"):
        name = str(path).split(":", 1)[1]
        text = resources.files("cespin.data").joinpath(f"{name}.crystal").read_text()
    else:
        text = Path(path).read_text()
    return parse_crystal_spec(text)


@dataclass(frozen=True)
class BathConfiguration:
    """Nuclear spins around the central ion, in canonical order (distance, then position)."""

    central_position: np.ndarray
    positions: np.ndarray  # (n, 3) nm, absolute
    species: tuple  # species name per spin
    site_classes: tuple
    species_table: dict
    cutoff_radius: float

    def __len__(self):
        return len(self.positions)

    @property
    def relative_positions(self) -> np.ndarray:
        return self.positions - self.central_position

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.relative_positions, axis=1)

    def species_of(self, i) -> SpinSpecies:
        return self.species_table[self.species[i]]

    def select(self, mask) -> "BathConfiguration":
        """Sub-bath keeping spins where ``mask`` is true (order preserved)."""
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        return BathConfiguration(
            self.central_position,
            self.positions[idx],
            tuple(self.species[i] for i in idx),
            tuple(self.site_classes[i] for i in idx),
            self.species_table,
            self.cutoff_radius,
        )

    def without_class(self, site_class) -> "BathConfiguration":
        return self.select([c != site_class for c in self.site_classes])


def generate_bath(
    spec: CrystalSpec,
    center,
    cutoff: float,
    species=("Al27",),
    max_candidates: int = 20_000_000,
) -> BathConfiguration:
    """All lattice sites of the selected species within ``cutoff`` nm of ``center``.

    The unit cell is replicated over every periodic image that can intersect
    the cutoff sphere.  The central ion's own site (distance 0) is excluded.
    """
    if cutoff < 0:
        raise PhysicsError("cutoff must be non-negative")
    if isinstance(species, str):
        species = (species,)
    center = np.asarray(center, dtype=float)
    a = spec.lattice_constant
    frac, rows = spec.fractional_array(species=species)
    cfrac = center / a
    lo = np.floor(cfrac - cutoff / a).astype(int) - 1
    hi = np.ceil(cfrac + cutoff / a).astype(int) + 1
    n_images = int(np.prod(hi - lo + 1))
    if n_images * max(len(rows), 1) > max_candidates:
        raise MemoryBudgetError(
            f"cutoff {cutoff} nm needs {n_images * len(rows)} candidate sites "
            f"(budget {max_candidates})"
        )
    images = np.array(list(itertools.product(*(range(l, h + 1) for l, h in zip(lo, hi)))), dtype=float)
    cart = (frac[None, :, :] + images[:, None, :]).reshape(-1, 3) * a
    labels = np.tile(np.arange(len(rows)), len(images))
    d = np.linalg.norm(cart - center, axis=1)
    keep = (d <= cutoff) & (d > 1e-9)
    cart, labels, d = cart[keep], labels[keep], d[keep]

    order = np.lexsort((np.round(cart[:, 2], 9), np.round(cart[:, 1], 9),
                        np.round(cart[:, 0], 9), np.round(d, 9)))
    cart, labels = cart[order], labels[order]
    if len(cart) > 1:
        pair_d, _ = cKDTree(cart).query(cart, k=2)
        if pair_d[:, 1].min() <= MIN_SEPARATION:
            raise CrystalSpecError("crystal produces overlapping bath sites")
    return BathConfiguration(
        center,
        cart,
        tuple(rows[i].species for i in labels),
        tuple(rows[i].site_class for i in labels),
        dict(spec.species_table),
        float(cutoff),
    )


def central_site(spec: CrystalSpec, frame: int | None = 0) -> np.ndarray:
    """Cartesian position (nm) of the dodecahedral site nearest the origin.

    With ``frame`` given, only sites carrying that local frame are eligible.
    """
    cands = [s for s in spec.sites if s.site_class == "dodecahedral"
             and (frame is None or s.frame == frame)]
    if not cands:
        raise CrystalSpecError(f"no dodecahedral site with frame {frame}")
    frac = np.array([s.fractional for s in cands])
    # nearest periodic image of each site to the origin
    frac = frac - np.round(frac)
    d = np.linalg.norm(frac, axis=1)
    best = np.lexsort((frac[:, 2], frac[:, 1], frac[:, 0], np.round(d, 12)))[0]
    return frac[best] * spec.lattice_constant


def frame_rotation(index: int) -> np.ndarray:
    """Rotation taking lab (cubic) coordinates to local frame ``index``; rows are local x, y, z."""
    z, x = (np.asarray(v, dtype=float) for v in FRAME_AXES[index])
    z /= np.linalg.norm(z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.array([x, y, z])


def g_principal_from_resonances(resonances=DEFAULT_RESONANCES, field=DEFAULT_CALIBRATION_FIELD):
    """Principal g values (g_x, g_y, g_z) in the local frame from three [110] resonances.

    For B along [110] the (local y along B) site resonates at g_y, the
    (local x along B) site at g_x, and the four sites with local z along a
    perpendicular cube axis at sqrt(g_z^2/2 + g_x^2/4 + g_y^2/4).
    """
    ny, nx, nrest = resonances
    scale = BOHR_MAGNETON * field
    gy, gx, grest = ny / scale, nx / scale, nrest / scale
    gz2 = 2 * (grest ** 2 - (gx ** 2 + gy ** 2) / 4)
    if gz2 <= 0:
        raise PhysicsError("resonances are inconsistent with a real g tensor")
    return np.array([gx, gy, np.sqrt(gz2)])


@dataclass(frozen=True)
class SiteFrameSet:
    rotations: np.ndarray  # (6, 3, 3), lab -> local
    g_principal: np.ndarray  # (3,)
    field_direction: np.ndarray  # unit, lab
    g_effective: np.ndarray = field(default=None)  # (6,)
    quantization_axes: np.ndarray = field(default=None)  # (6, 3), lab

    def g_tensor(self, index) -> np.ndarray:
        """Lab-frame g tensor of site ``index``."""
        r = self.rotations[index]
        return r.T @ np.diag(self.g_principal) @ r

    def resonances(self, field_magnitude) -> np.ndarray:
        """Electron spin resonance frequency of each site, MHz."""
        return self.g_effective * BOHR_MAGNETON * field_magnitude


def site_frames(spec: CrystalSpec | None, lab_field_direction,
                g_principal=None) -> SiteFrameSet:
    """The six local Ce frames and their effective g for a field direction."""
    b = np.asarray(lab_field_direction, dtype=float)
    norm = np.linalg.norm(b)
    if norm == 0:
        raise PhysicsError("field direction has zero length")
    b = b / norm
    if spec is not None:
        frames = {s.frame for s in spec.sites if s.site_class == "dodecahedral"}
        if frames and frames != set(range(len(FRAME_AXES))):
            raise CrystalSpecError(f"crystal labels frames {sorted(frames)}, expected 0..5")
    if g_principal is None:
        g_principal = g_principal_from_resonances()
    g_principal = np.asarray(g_principal, dtype=float)
    rots = np.array([frame_rotation(k) for k in range(len(FRAME_AXES))])
    gb = np.array([r.T @ (g_principal * (r @ b)) for r in rots])
    geff = np.linalg.norm(gb, axis=1)
    return SiteFrameSet(rots, g_principal, b, geff, gb / geff[:, None])
