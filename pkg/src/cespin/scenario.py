"""Assembly of a central Ce spin and its nuclear bath from a crystal description."""

from __future__ import annotations

import numpy as np

from .hamiltonian import CentralSpinParams, SpinSystem, build_spin_system
from .lattice import (DEFAULT_FIELD_DIRECTION, BathConfiguration, central_site, generate_bath,
                      load_crystal_spec, site_frames)


def central_spin_setup(crystal="builtin:yag", field=49.0, direction=DEFAULT_FIELD_DIRECTION,
                       frame=0, cutoff=2.5, species=("Al27",), exclude_classes=()):
    """Bath around the chosen Ce site and the coupled spin system.

    Returns ``(bath, central, system)``.
    """
    spec = load_crystal_spec(crystal) if isinstance(crystal, str) else crystal
    center = central_site(spec, frame)
    bath: BathConfiguration = generate_bath(spec, center, cutoff, species)
    for cls in exclude_classes:
        bath = bath.without_class(cls)
    frames = site_frames(spec, direction)
    central = CentralSpinParams.from_frames(frames, frame, field)
    system: SpinSystem = build_spin_system(bath, central)
    return bath, central, system


def hyperfine_summary(system: SpinSystem) -> dict:
    a = np.linalg.norm(system.hyperfine, axis=1)
    return {"n_spins": len(system), "max_hyperfine_MHz": float(a.max()) if len(a) else 0.0}
