import itertools

import numpy as np
import pytest

from cespin.errors import CrystalSpecError, MemoryBudgetError, PhysicsError
from cespin.lattice import (FRAME_AXES, SpinSpecies, central_site, frame_rotation, generate_bath,
                            g_principal_from_resonances, parse_crystal_spec, site_frames)
from cespin.constants import NUCLEAR_MAGNETON

A = 1.2008


def test_shipped_yag_has_16_octahedral_and_24_tetrahedral_al(yag):
    al = [s for s in yag.sites if s.species == "Al27"]
    assert len(al) == 40
    assert sum(s.site_class == "octahedral" for s in al) == 16
    assert sum(s.site_class == "tetrahedral" for s in al) == 24


def test_dodecahedral_sites_carry_each_frame_four_times(yag):
    frames = [s.frame for s in yag.sites if s.site_class == "dodecahedral"]
    assert len(frames) == 24
    assert all(frames.count(k) == 4 for k in range(6))


def test_cell_volume_in_metadata(yag):
    assert yag.metadata["cell_volume_nm3"] == pytest.approx(1.7315, abs=1e-4)


def test_al27_gyromagnetic_ratio_from_moment(yag):
    al = yag.species_table["Al27"]
    assert al.spin == 2.5
    assert al.gyromagnetic_ratio == pytest.approx(3.64 * NUCLEAR_MAGNETON / 2.5, rel=1e-12)
    assert al.gyromagnetic_ratio == pytest.approx(11.099e-3, rel=1e-3)


def test_empty_site_list_rejected():
    text = "[lattice]\nlattice_constant = 1.0\n[species]\nAl27 5/2 mu=3.64 1.0\n[sites]\n"
    with pytest.raises(CrystalSpecError):
        parse_crystal_spec(text)


@pytest.mark.parametrize("bad", [
    "Al27 octahedral 1.2 0 0",        # coordinate outside [0, 1)
    "Xx99 octahedral 0 0 0",          # unknown species
    "Al27 cubic 0 0 0",               # unknown class
    "Al27 octahedral 0 0",            # too few fields
])
def test_invalid_site_rows_rejected(bad):
    text = f"[lattice]\nlattice_constant = 1.0\n[species]\nAl27 5/2 mu=3.64 1.0\n[sites]\n{bad}\n"
    with pytest.raises(CrystalSpecError):
        parse_crystal_spec(text)


def test_malformed_species_and_missing_lattice_constant():
    with pytest.raises(CrystalSpecError):
        parse_crystal_spec("[lattice]\nname = x\n[species]\nAl27 5/2 mu=3.64 1.0\n[sites]\nAl27 octahedral 0 0 0\n")
    with pytest.raises(CrystalSpecError):
        parse_crystal_spec("[lattice]\nlattice_constant = 1\n[species]\nAl27 five mu=3.64 1.0\n")


def test_species_invariants():
    with pytest.raises(CrystalSpecError):
        SpinSpecies("x", 0.7, 1.0)
    with pytest.raises(CrystalSpecError):
        SpinSpecies("x", 0.5, 1.0, abundance=1.5)


def test_tiny_cutoff_gives_empty_bath(yag):
    assert len(generate_bath(yag, central_site(yag), 0.01)) == 0


def _brute_force_count(yag, center, cutoff):
    frac = np.array([s.fractional for s in yag.sites if s.species == "Al27"])
    count = 0
    for i, j, k in itertools.product(range(-2, 3), repeat=3):
        for f in frac:
            d = np.linalg.norm((f + (i, j, k)) * A - center)
            if 0 < d <= cutoff:
                count += 1
    return count


def test_bath_count_matches_triple_loop(yag):
    center = central_site(yag)
    bath = generate_bath(yag, center, 1.0)
    assert len(bath) == _brute_force_count(yag, center, 1.0)


def test_bath_invariants(yag):
    bath = generate_bath(yag, central_site(yag), 1.5)
    d = bath.distances
    assert np.all(d > 0) and np.all(d <= 1.5)
    assert np.all(np.diff(d) >= -1e-9)
    pair = np.linalg.norm(bath.positions[:, None] - bath.positions[None], axis=-1)
    pair[np.diag_indices_from(pair)] = np.inf
    assert pair.min() > 0.05


def test_bath_is_deterministic(yag):
    a = generate_bath(yag, central_site(yag), 1.2)
    b = generate_bath(yag, central_site(yag), 1.2)
    assert np.array_equal(a.positions, b.positions) and a.site_classes == b.site_classes


def test_translation_by_lattice_vector_is_congruent(yag):
    c = central_site(yag)
    a = generate_bath(yag, c, 1.5)
    b = generate_bath(yag, c + np.array([A, 0, 0]), 1.5)
    assert np.allclose(np.sort(a.distances), np.sort(b.distances), atol=1e-9)


def test_density_at_3nm(yag):
    bath = generate_bath(yag, central_site(yag), 3.0)
    density = len(bath) / (4 / 3 * np.pi * 3.0 ** 3)
    assert density == pytest.approx(23.1, abs=1.0)


@pytest.mark.parametrize("r", [2.0, 2.5])
def test_count_grows_with_volume(yag, r):
    n = len(generate_bath(yag, central_site(yag), r))
    assert n == pytest.approx(4 / 3 * np.pi * r ** 3 * 40 / A ** 3, rel=0.1)


def test_species_filter_and_negative_cutoff(yag):
    y = generate_bath(yag, central_site(yag), 1.0, species="Y89")
    assert set(y.species) == {"Y89"}
    with pytest.raises(PhysicsError):
        generate_bath(yag, central_site(yag), -1.0)


def test_memory_budget(yag):
    with pytest.raises(MemoryBudgetError):
        generate_bath(yag, central_site(yag), 20.0, max_candidates=10_000)


def test_without_class_partitions_bath(yag):
    bath = generate_bath(yag, central_site(yag), 1.5)
    n_oct = len(bath.without_class("tetrahedral"))
    n_tet = len(bath.without_class("octahedral"))
    assert n_oct + n_tet == len(bath)


def test_frames_are_proper_rotations():
    frames = site_frames(None, (1, 1, 0))
    assert frames.rotations.shape == (6, 3, 3)
    for r in frames.rotations:
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_field_along_110_reproduces_resonance_pattern(yag):
    f = np.sort(site_frames(yag, (1, 1, 0)).resonances(49.0))
    assert np.allclose(f, [650, 1310, 1550, 1550, 1550, 1550], rtol=0.01)


def test_site_with_local_y_along_field_resonates_at_650(yag):
    frames = site_frames(yag, (1, 1, 0))
    y_axes = frames.rotations[:, 1]
    k = int(np.argmax(np.abs(y_axes @ (np.array([1, 1, 0]) / np.sqrt(2)))))
    assert frames.resonances(49.0)[k] == pytest.approx(650, abs=1e-6)
    assert k == 0


def test_effective_g_values():
    geff = np.sort(site_frames(None, (1, 1, 0)).g_effective)
    assert geff[0] == pytest.approx(0.948, abs=1e-3)
    assert geff[1] == pytest.approx(1.910, abs=1e-3)
    assert np.allclose(geff[2:], 2.260, atol=1e-3)


def test_principal_g_inconsistent_resonances():
    with pytest.raises(PhysicsError):
        g_principal_from_resonances((650, 1310, 500))


def test_zero_field_direction_rejected():
    with pytest.raises(PhysicsError):
        site_frames(None, (0, 0, 0))


def test_central_site_has_requested_frame(yag):
    c = central_site(yag, frame=0)
    frac = c / A % 1.0
    match = [s for s in yag.sites if s.site_class == "dodecahedral"
             and np.allclose(np.asarray(s.fractional), frac, atol=1e-9)]
    assert len(match) == 1 and match[0].frame == 0


def test_frame_rotation_maps_axes():
    for k, (z, x) in enumerate(FRAME_AXES):
        r = frame_rotation(k)
        assert np.allclose(r @ (np.array(z) / np.linalg.norm(z)), [0, 0, 1])
        assert np.allclose(r @ (np.array(x) / np.linalg.norm(x)), [1, 0, 0])
