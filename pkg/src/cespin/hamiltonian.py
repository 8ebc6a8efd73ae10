"""Effective spin Hamiltonians for the Ce electron spin and its nuclear bath.

Conventions
-----------
Frequencies are linear, in MHz; a Hamiltonian ``H`` (MHz) generates
``U(t) = exp(-2j * pi * H * t)`` for ``t`` in microseconds.

Bath operators are expressed in a *field frame* whose z axis is the applied
field direction.  Nuclear Zeeman terms read ``-gamma * B * I_z``.  The central
spin is treated in the secular approximation: it enters each conditional
Hamiltonian only through ``m_s * (a . I)``, where ``a`` is the row of the
hyperfine tensor along the electron quantization axis and ``m_s = +-1/2``.
This is justified because the electron splitting (>= 650 MHz at 49 mT) is
three orders of magnitude above every hyperfine coupling (< 1 MHz).

Tensor couplings use the point-dipole form
``D = -(mu0 h g1 g2 / 4 pi r^3) (3 n n^T - 1)`` with ``H = I1 . D . I2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .constants import BOHR_MAGNETON, DIPOLAR_PREFACTOR
from .errors import DimensionCapError, DistanceUnderflowError, PhysicsError
from .lattice import MIN_SEPARATION, BathConfiguration, SiteFrameSet, SpinSpecies

#: Closest electron-nucleus distance accepted by :func:`hyperfine_tensor`, nm.
MIN_HYPERFINE_DISTANCE = 0.1

#: Largest cluster Hilbert-space dimension, four I = 5/2 spins.
DEFAULT_DIMENSION_CAP = 1296


def electron_splitting(g: float, field: float) -> float:
    """Splitting of the m_s = +-1/2 doublet, MHz, for effective ``g`` at ``field`` mT."""
    return g * BOHR_MAGNETON * field


def nuclear_larmor(species: SpinSpecies, field: float) -> float:
    """Nuclear Larmor frequency |gamma| * B in MHz."""
    return abs(species.gyromagnetic_ratio) * field


def _dipolar(r, gamma1, gamma2):
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r, axis=-1)
    n = r / d[..., None]
    pref = DIPOLAR_PREFACTOR * np.asarray(gamma1) * np.asarray(gamma2) / d ** 3
    return -pref[..., None, None] * (3 * n[..., :, None] * n[..., None, :] - np.eye(3))


def dipolar_tensor(r, gamma1: float, gamma2: float) -> np.ndarray:
    """Point-dipole coupling tensor (MHz) between two spins separated by ``r`` nm."""
    if np.linalg.norm(r) <= MIN_SEPARATION:
        raise DistanceUnderflowError(f"spins closer than {MIN_SEPARATION} nm")
    return _dipolar(r, gamma1, gamma2)


@dataclass(frozen=True)
class CentralSpinParams:
    effective_g: float
    field: np.ndarray  # lab vector, mT
    quantization_axis: np.ndarray  # lab unit vector

    def __post_init__(self):
        if not self.effective_g > 0:
            raise PhysicsError("effective g must be positive")
        q = np.asarray(self.quantization_axis, dtype=float)
        object.__setattr__(self, "quantization_axis", q / np.linalg.norm(q))
        object.__setattr__(self, "field", np.asarray(self.field, dtype=float))

    @property
    def field_magnitude(self) -> float:
        return float(np.linalg.norm(self.field))

    @property
    def gyromagnetic_ratio(self) -> float:
        """Effective electron g * mu_B / h, MHz/mT."""
        return self.effective_g * BOHR_MAGNETON

    @classmethod
    def from_g_tensor(cls, g_tensor, field):
        gb = np.asarray(g_tensor) @ np.asarray(field, dtype=float)
        b = np.linalg.norm(field)
        return cls(np.linalg.norm(gb) / b, field, gb)

    @classmethod
    def from_frames(cls, frames: SiteFrameSet, index: int, field_magnitude: float):
        return cls(
            float(frames.g_effective[index]),
            frames.field_direction * field_magnitude,
            frames.quantization_axes[index],
        )


def hyperfine_tensor(central: CentralSpinParams, r, species: SpinSpecies) -> np.ndarray:
    """Electron-nuclear point-dipole tensor (MHz) for a nucleus at ``r`` nm from the ion."""
    if np.linalg.norm(r) <= MIN_HYPERFINE_DISTANCE:
        raise DistanceUnderflowError(f"nucleus closer than {MIN_HYPERFINE_DISTANCE} nm to the ion")
    return _dipolar(r, central.gyromagnetic_ratio, species.gyromagnetic_ratio)


def field_frame(direction) -> np.ndarray:
    """Rotation (rows x, y, z) from lab coordinates to a frame with z along ``direction``."""
    z = np.asarray(direction, dtype=float)
    z = z / np.linalg.norm(z)
    helper = np.eye(3)[np.argmin(np.abs(z))]
    x = helper - (helper @ z) * z
    x /= np.linalg.norm(x)
    return np.array([x, np.cross(z, x), z])


@lru_cache(maxsize=None)
def spin_matrices(spin: float):
    """(I_x, I_y, I_z) for spin ``spin`` in the |m = I ... -I> basis."""
    m = np.arange(spin, -spin - 1, -1)
    d = len(m)
    ip = np.zeros((d, d))
    for k in range(1, d):
        ip[k - 1, k] = np.sqrt(spin * (spin + 1) - m[k] * (m[k] + 1))
    ops = np.array([(ip + ip.T) / 2, (ip - ip.T) / 2j, np.diag(m)], dtype=complex)
    ops.setflags(write=False)
    return ops


def quadrupole_tensor(coupling: float, spin: float, axis) -> np.ndarray:
    """Axial quadrupole tensor ``Q`` (MHz, lab) with ``H_Q = I . Q . I``.

    ``coupling`` is e^2 q Q / h in MHz; zero for spin 1/2.
    """
    if spin < 1:
        return np.zeros((3, 3))
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    return coupling / (4 * spin * (2 * spin - 1)) * (3 * np.outer(n, n) - np.eye(3))


@dataclass(frozen=True)
class SpinSystem:
    """Bath couplings expressed in the field frame, ready for cluster Hamiltonians.

    ``hyperfine`` holds, per nucleus, the row of the hyperfine tensor along the
    electron quantization axis.  ``pair_couplings`` optionally replaces the
    point-dipole tensor for specific index pairs ``(i, j)`` with ``i < j``.
    """

    spins: np.ndarray
    gammas: np.ndarray
    positions: np.ndarray  # field frame, nm, relative to the ion
    hyperfine: np.ndarray  # (n, 3) MHz
    field: float  # mT
    site_classes: tuple = ()
    quadrupole: np.ndarray | None = None  # (n, 3, 3) field frame, MHz
    pair_couplings: dict = field(default_factory=dict)
    dimension_cap: int = DEFAULT_DIMENSION_CAP

    def __len__(self):
        return len(self.spins)

    def multiplicity(self, i) -> int:
        return int(round(2 * self.spins[i])) + 1

    def pair_tensor(self, i, j) -> np.ndarray:
        if (i, j) in self.pair_couplings:
            return np.asarray(self.pair_couplings[(i, j)])
        return dipolar_tensor(self.positions[j] - self.positions[i], self.gammas[i], self.gammas[j])

    def describe(self) -> dict:
        return {
            "n_spins": len(self),
            "field_mT": self.field,
            "site_classes": {c: self.site_classes.count(c) for c in sorted(set(self.site_classes))},
        }


def build_spin_system(
    bath: BathConfiguration,
    central: CentralSpinParams,
    quadrupole: dict | None = None,
    dimension_cap: int = DEFAULT_DIMENSION_CAP,
) -> SpinSystem:
    """Couple every bath spin to the central ion and express it in the field frame.

    ``quadrupole`` maps a site class to ``(coupling_MHz, lab_axis)``.
    """
    rot = field_frame(central.field)
    rel = bath.relative_positions
    spins = np.array([bath.species_of(i).spin for i in range(len(bath))], dtype=float)
    gammas = np.array([bath.species_of(i).gyromagnetic_ratio for i in range(len(bath))])
    if len(rel) and np.linalg.norm(rel, axis=1).min() <= MIN_HYPERFINE_DISTANCE:
        raise DistanceUnderflowError(f"nucleus closer than {MIN_HYPERFINE_DISTANCE} nm to the ion")
    tensors = _dipolar(rel, central.gyromagnetic_ratio, gammas) if len(rel) else np.zeros((0, 3, 3))
    secular = np.einsum("i,nij->nj", central.quantization_axis, tensors)
    quad = None
    if quadrupole:
        quad = np.zeros((len(bath), 3, 3))
        for i, cls in enumerate(bath.site_classes):
            if cls in quadrupole:
                coupling, axis = quadrupole[cls]
                quad[i] = rot @ quadrupole_tensor(coupling, spins[i], axis) @ rot.T
    return SpinSystem(
        spins=spins,
        gammas=gammas,
        positions=rel @ rot.T,
        hyperfine=secular @ rot.T,
        field=central.field_magnitude,
        site_classes=tuple(bath.site_classes),
        quadrupole=quad,
        dimension_cap=dimension_cap,
    )


@dataclass(frozen=True)
class ClusterHamiltonianPair:
    h_plus: np.ndarray
    h_minus: np.ndarray
    members: tuple


@lru_cache(maxsize=64)
def _embedded_ops(multiplicities: tuple):
    """Per-member spin operators embedded in the cluster space, shape (k, 3, D, D)."""
    out = []
    for pos, d in enumerate(multiplicities):
        spin = (d - 1) / 2
        before = int(np.prod(multiplicities[:pos], dtype=int))
        after = int(np.prod(multiplicities[pos + 1:], dtype=int))
        out.append([np.kron(np.kron(np.eye(before), s), np.eye(after)) for s in spin_matrices(spin)])
    arr = np.array(out, dtype=complex)
    arr.setflags(write=False)
    return arr


def cluster_dimension(system: SpinSystem, members) -> int:
    return int(np.prod([system.multiplicity(i) for i in members], dtype=int))


def cluster_hamiltonians(system: SpinSystem, clusters, field: float | None = None):
    """Batched conditional Hamiltonians for clusters sharing one multiplicity signature.

    Returns ``(h_plus, h_minus)`` each of shape ``(len(clusters), D, D)``.
    """
    clusters = [tuple(c) for c in clusters]
    mults = tuple(system.multiplicity(i) for i in clusters[0])
    dim = int(np.prod(mults, dtype=int))
    if dim > system.dimension_cap:
        raise DimensionCapError(f"cluster dimension {dim} exceeds cap {system.dimension_cap}")
    for c in clusters:
        if tuple(system.multiplicity(i) for i in c) != mults:
            raise PhysicsError("batched clusters must share a multiplicity signature")
    b = system.field if field is None else field
    ops = _embedded_ops(mults)
    idx = np.array(clusters, dtype=int)
    k = idx.shape[1]

    common = np.zeros((len(clusters), dim, dim), dtype=complex)
    coupling = np.zeros_like(common)
    for m in range(k):
        members = idx[:, m]
        zeeman = -system.gammas[members] * b
        common += zeeman[:, None, None] * ops[m, 2]
        coupling += 0.5 * np.einsum("na,aij->nij", system.hyperfine[members], ops[m])
        if system.quadrupole is not None:
            quad_ops = np.einsum("aij,bjk->abik", ops[m], ops[m])
            common += np.einsum("nab,abij->nij", system.quadrupole[members], quad_ops)
    for m in range(k):
        for l in range(m + 1, k):
            tensors = np.full((len(idx), 3, 3), np.nan)
            if system.pair_couplings:
                for n, (i, j) in enumerate(zip(idx[:, m], idx[:, l])):
                    if (int(i), int(j)) in system.pair_couplings:
                        tensors[n] = system.pair_couplings[(int(i), int(j))]
            missing = np.isnan(tensors[:, 0, 0])
            if missing.any():
                r = system.positions[idx[missing, l]] - system.positions[idx[missing, m]]
                if np.linalg.norm(r, axis=1).min() <= MIN_SEPARATION:
                    raise DistanceUnderflowError(f"spins closer than {MIN_SEPARATION} nm")
                tensors[missing] = _dipolar(r, system.gammas[idx[missing, m]], system.gammas[idx[missing, l]])
            pair_ops = np.einsum("aij,bjk->abik", ops[m], ops[l])
            common += np.einsum("nab,abij->nij", tensors, pair_ops)
    return common + coupling, common - coupling


def conditional_cluster_hamiltonian(system: SpinSystem, members, field: float | None = None) -> ClusterHamiltonianPair:
    """H_+ and H_- of one cluster, conditioned on the central spin at m_s = +1/2 and -1/2."""
    members = tuple(int(i) for i in members)
    if not members:
        raise PhysicsError("cluster must be nonempty")
    if min(members) < 0 or max(members) >= len(system):
        raise PhysicsError("cluster member outside the bath")
    hp, hm = cluster_hamiltonians(system, [members], field)
    return ClusterHamiltonianPair(hp[0], hm[0], members)
