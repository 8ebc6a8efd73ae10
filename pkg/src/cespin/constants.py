"""Physical constants in the package unit system.

Units throughout: length in nm, magnetic field in mT, frequency in MHz
(linear, not angular), time in microseconds.  Gyromagnetic ratios are linear
frequency per field, MHz/mT.
"""

from scipy import constants as _c

#: Bohr magneton over Planck constant, MHz/mT.
BOHR_MAGNETON = _c.physical_constants["Bohr magneton in Hz/T"][0] * 1e-9

#: Nuclear magneton over Planck constant, MHz/mT.
NUCLEAR_MAGNETON = _c.physical_constants["nuclear magneton in MHz/T"][0] * 1e-3

#: Free-electron g factor (magnitude).
FREE_ELECTRON_G = -_c.physical_constants["electron g factor"][0]

# (mu0 / 4 pi) * h expressed so that (DIPOLAR_PREFACTOR * g1 * g2 / r**3) is
# in MHz with g1, g2 in MHz/mT and r in nm.
DIPOLAR_PREFACTOR = _c.mu_0 / (4 * _c.pi) * _c.h * 1e18 / 1e-27 / 1e6


def table():
    """Name, value, unit rows for display."""
    return [
        ("bohr_magneton_over_h", BOHR_MAGNETON, "MHz/mT"),
        ("nuclear_magneton_over_h", NUCLEAR_MAGNETON, "MHz/mT"),
        ("free_electron_g", FREE_ELECTRON_G, "1"),
        ("mu0_h_over_4pi", DIPOLAR_PREFACTOR, "MHz nm^3 / (MHz/mT)^2"),
        ("mu0", _c.mu_0, "T m/A"),
        ("planck_h", _c.h, "J s"),
    ]
