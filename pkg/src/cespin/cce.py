"""Cluster correlation expansion of central-spin coherence under pi-pulse sequences.

Each cluster signal is ``L_C(t) = Tr[U_-(t)^dag U_+(t)] / dim`` for an
unpolarized bath, where ``U_+`` evolves under ``H_+`` until the first pi pulse,
then under ``H_-`` and so on, and ``U_-`` starts under ``H_-``.  The
irreducible contribution of a cluster divides out all of its sub-clusters,
and the coherence is the product of irreducible contributions in canonical
cluster order (by size, then lexicographic), which keeps the result bitwise
reproducible for any worker count.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.spatial import cKDTree

from .curves import CoherenceCurve, write_table
from .errors import BracketError, MissingSubclusterError, PhysicsError, SequenceError
from .hamiltonian import SpinSystem, cluster_dimension, cluster_hamiltonians
from .pulses import PulseSequence

log = logging.getLogger(__name__)

#: Sub-cluster signals smaller than this are not divided out.
TILDE_GUARD = 1e-6
#: Grid points evaluated together while scanning for a 1/e crossing.
GRID_BLOCK = 4

#: Cached eigenvector storage above this many complex entries is skipped.
CACHE_LIMIT = 60_000_000


def canonical(clusters):
    return sorted((tuple(int(i) for i in c) for c in clusters), key=lambda c: (len(c), c))


def enumerate_clusters(bath, order: int = 2, pair_cutoff: float = 0.6):
    """Every spin as a single cluster, plus (order 2) all pairs within ``pair_cutoff`` nm.

    ``bath`` is a BathConfiguration, a SpinSystem or an (n, 3) position array.
    """
    if order not in (1, 2):
        raise PhysicsError("cluster order must be 1 or 2")
    if pair_cutoff < 0:
        raise PhysicsError("pair_cutoff must be non-negative")
    pos = getattr(bath, "positions", bath)
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    clusters = [(i,) for i in range(len(pos))]
    if order == 2 and len(pos) > 1 and pair_cutoff > 0:
        pairs = cKDTree(pos).query_pairs(pair_cutoff, output_type="ndarray")
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        clusters += [(int(i), int(j)) for i, j in pairs]
    return clusters


def _propagator(vecs, vals, dt):
    phase = np.exp(-2j * np.pi * vals * dt)
    return (vecs * phase[:, None, :]) @ vecs.conj().transpose(0, 2, 1)


def _check_sequence(sequence: PulseSequence):
    if sequence.angles and not np.allclose(sequence.angles, np.pi):
        raise SequenceError("cluster expansion supports only ideal pi pulses between free evolution")


def _signals_from_eig(eig, sequence: PulseSequence, times):
    """Signals (n_clusters, n_times) of one batch from eigendecompositions of H_+ and H_-."""
    vals_p, vecs_p, vals_m, vecs_m = eig
    n, dim = vals_p.shape
    out = np.ones((n, len(times)), dtype=complex)
    npulse = sequence.n_pulses
    for k, t in enumerate(times):
        if t == 0:
            continue
        if npulse == 0:
            up = _propagator(vecs_p, vals_p, t)
            um = _propagator(vecs_m, vals_m, t)
        elif sequence.is_cpmg:
            tau = t / (2 * npulse)
            p1 = _propagator(vecs_p, vals_p, tau)
            m1 = _propagator(vecs_m, vals_m, tau)
            if npulse == 1:
                up, um = m1 @ p1, p1 @ m1
            else:
                p2 = _propagator(vecs_p, vals_p, 2 * tau)
                m2 = _propagator(vecs_m, vals_m, 2 * tau)
                cyc_p = np.linalg.matrix_power(p1 @ m2 @ p1, npulse // 2)
                cyc_m = np.linalg.matrix_power(m1 @ p2 @ m1, npulse // 2)
                if npulse % 2:
                    up, um = m1 @ p1 @ cyc_p, p1 @ m1 @ cyc_m
                else:
                    up, um = cyc_p, cyc_m
        else:
            edges = sequence.switch_times(t)
            up = um = None
            for j, dt in enumerate(np.diff(edges)):
                sp = _propagator(vecs_p, vals_p, dt)
                sm = _propagator(vecs_m, vals_m, dt)
                a, b = (sp, sm) if j % 2 == 0 else (sm, sp)
                up = a if up is None else a @ up
                um = b if um is None else b @ um
        out[:, k] = np.einsum("nij,nij->n", um.conj(), up) / dim
    return out


def _eig_batch(system, clusters):
    hp, hm = cluster_hamiltonians(system, clusters)
    vals_p, vecs_p = np.linalg.eigh(hp)
    vals_m, vecs_m = np.linalg.eigh(hm)
    return vals_p, vecs_p, vals_m, vecs_m


def _groups(system, chunk):
    """Split a chunk into runs sharing a multiplicity signature, keeping positions."""
    keyed = {}
    for pos, c in enumerate(chunk):
        keyed.setdefault(tuple(system.multiplicity(i) for i in c), []).append(pos)
    return list(keyed.values())


def _chunk_signals(system, chunk, sequence, times, eigs=None):
    out = np.empty((len(chunk), len(times)), dtype=complex)
    for g, positions in enumerate(_groups(system, chunk)):
        eig = eigs[g] if eigs is not None else _eig_batch(system, [chunk[p] for p in positions])
        out[positions] = _signals_from_eig(eig, sequence, times)
    return out


_WORKER_SYSTEM = None


def _init_worker(system):
    global _WORKER_SYSTEM
    _WORKER_SYSTEM = system


def _worker(args):
    chunk, sequence, times = args
    return _chunk_signals(_WORKER_SYSTEM, chunk, sequence, times)


def cluster_signal(cluster, system: SpinSystem, sequence: PulseSequence, times) -> np.ndarray:
    """Signal L_C(t) of a single cluster at total times ``times`` (us)."""
    _check_sequence(sequence)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise PhysicsError("times must be non-negative")
    cluster = tuple(int(i) for i in cluster)
    return _chunk_signals(system, [cluster], sequence, times)[0]


def cce_assemble(signals, clusters, times=None, metadata=None) -> CoherenceCurve:
    """Product of irreducible cluster contributions.

    ``signals`` is aligned with ``clusters`` (array of shape (n, n_times) or a
    mapping from cluster tuple to signal).
    """
    clusters = [tuple(int(i) for i in c) for c in clusters]
    if isinstance(signals, dict):
        table = {tuple(k): np.asarray(v) for k, v in signals.items()}
    else:
        signals = np.asarray(signals)
        table = {c: signals[n] for n, c in enumerate(clusters)}
    n_times = len(next(iter(table.values()))) if table else (0 if times is None else len(times))
    tilde = {}
    guarded = 0
    for c in canonical(clusters):
        if c not in table:
            raise MissingSubclusterError(f"no signal for cluster {c}")
        raw = table[c]
        if len(c) == 1:
            tilde[c] = raw
            continue
        denom = np.ones(n_times, dtype=complex)
        small = np.zeros(n_times, dtype=bool)
        for size in range(1, len(c)):
            for sub in itertools.combinations(c, size):
                if sub not in tilde:
                    if size == 1:
                        raise MissingSubclusterError(f"cluster {c} lacks sub-cluster {sub}")
                    continue
                denom = denom * tilde[sub]
                small |= np.abs(table[sub]) < TILDE_GUARD
        value = np.where(small, raw, raw / np.where(small, 1.0, denom))
        guarded += int(small.sum())
        tilde[c] = value
    if guarded:
        log.warning("%d cluster/time points had sub-cluster signals below %g; raw values used",
                    guarded, TILDE_GUARD)
    total = np.ones(n_times, dtype=complex)
    for c in canonical(clusters):
        total = total * tilde[c]
    if times is None:
        times = np.arange(n_times, dtype=float)
    meta = dict(metadata or {})
    meta.setdefault("n_clusters", len(clusters))
    meta.setdefault("cce_order", max((len(c) for c in clusters), default=0))
    return CoherenceCurve(times, total, meta)


class CCESolver:
    """Cluster expansion over a fixed spin system and cluster list.

    Clusters are processed in fixed-size chunks whose composition does not
    depend on ``workers``.  With ``workers == 1`` the eigendecompositions are
    cached between calls unless they would exceed :data:`CACHE_LIMIT`.
    """

    def __init__(self, system: SpinSystem, clusters, workers: int = 1, chunk_size: int = 256,
                 cache: bool | None = None):
        if workers < 1:
            raise PhysicsError("workers must be >= 1")
        self.system = system
        self.clusters = canonical(clusters)
        for c in self.clusters:
            cluster_dimension(system, c)
        self.workers = workers
        self.chunks = [self.clusters[i:i + chunk_size] for i in range(0, len(self.clusters), chunk_size)]
        if cache is None:
            size = sum(cluster_dimension(system, c) ** 2 for c in self.clusters)
            cache = workers == 1 and 2 * size <= CACHE_LIMIT
        self.cache = cache
        self._eigs = {}

    def _eig_chunk(self, k):
        if k not in self._eigs:
            chunk = self.chunks[k]
            eigs = [_eig_batch(self.system, [chunk[p] for p in pos]) for pos in _groups(self.system, chunk)]
            if not self.cache:
                return eigs
            self._eigs[k] = eigs
        return self._eigs[k]

    def signals(self, sequence: PulseSequence, times) -> np.ndarray:
        _check_sequence(sequence)
        times = np.asarray(times, dtype=float)
        if np.any(times < 0):
            raise PhysicsError("times must be non-negative")
        if self.workers == 1:
            parts = [_chunk_signals(self.system, chunk, sequence, times, self._eig_chunk(k))
                     for k, chunk in enumerate(self.chunks)]
        else:
            with ProcessPoolExecutor(self.workers, initializer=_init_worker, initargs=(self.system,)) as ex:
                parts = list(ex.map(_worker, [(c, sequence, times) for c in self.chunks]))
        if not parts:
            return np.ones((0, len(times)), dtype=complex)
        return np.concatenate(parts)

    def coherence(self, sequence: PulseSequence, times, dump=None) -> CoherenceCurve:
        times = np.asarray(times, dtype=float)
        sig = self.signals(sequence, times)
        if dump is not None:
            dump_cluster_signals(dump, self.clusters, times, sig)
        meta = {"sequence": sequence.describe(), "bath": self.system.describe()}
        return cce_assemble(sig, self.clusters, times, meta)

    def coherence_time(self, sequence: PulseSequence, t_max: float, n_grid: int = 40,
                       level: float = np.exp(-1), rtol: float = 1e-3, max_extend: int = 4) -> float:
        """First time |C(t)| drops to ``level``, by grid scan and then bisection."""
        hi = None
        for _ in range(max_extend + 1):
            grid = np.linspace(0, t_max, n_grid + 1)
            # scan in small blocks so points past the first crossing are never evaluated
            for start in range(1, n_grid + 1, GRID_BLOCK):
                block = grid[start:start + GRID_BLOCK]
                below = np.flatnonzero(np.abs(self.coherence(sequence, block).values) <= level)
                if below.size:
                    k = start + below[0]
                    lo, hi = grid[k - 1], grid[k]
                    break
            if hi is not None:
                break
            t_max *= 2
        else:
            raise BracketError(f"coherence stays above {level:.4g} up to {t_max / 2:g} us")
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if abs(self.coherence(sequence, [mid]).values[0]) <= level:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)


def compute_coherence(system: SpinSystem, sequence: PulseSequence, times, order: int = 2,
                      pair_cutoff: float = 0.6, workers: int = 1, chunk_size: int = 256,
                      dump=None) -> CoherenceCurve:
    clusters = enumerate_clusters(system, order, pair_cutoff)
    curve = CCESolver(system, clusters, workers, chunk_size).coherence(sequence, times, dump)
    curve.metadata.update(cce_order=order, pair_cutoff_nm=pair_cutoff)
    return curve


def dump_cluster_signals(path, clusters, times, signals):
    rows = []
    for c, sig in zip(clusters, signals):
        label = "-".join(str(i) for i in c)
        rows.extend((label, t, v.real, v.imag) for t, v in zip(times, sig))
    return write_table(path, ["cluster", "time(us)", "signal_re", "signal_im"], rows)


def pair_echo_analytic(system: SpinSystem, pair, tau) -> np.ndarray:
    """Hahn echo L(2 tau) of a spin-1/2 pair from its conditional pseudospin precession.

    Valid for purely secular hyperfine couplings and a pair tensor of the
    form diag(b, b, c).  In the flip-flop subspace the pair evolves under the
    pseudo-field (b, 0, delta_+-) with delta_+- = w1 - w2 +- (a1 - a2) / 2;
    the polarized states only acquire phases that cancel in the echo.
    """
    i, j = (int(k) for k in pair)
    if not (np.isclose(system.spins[i], 0.5) and np.isclose(system.spins[j], 0.5)):
        raise PhysicsError("analytic pair echo needs two spin-1/2 nuclei")
    hf = system.hyperfine[[i, j]]
    if np.any(np.abs(hf[:, :2]) > 1e-12 * max(1.0, np.abs(hf).max())):
        raise PhysicsError("analytic pair echo needs purely secular hyperfine couplings")
    d = system.pair_tensor(i, j)
    off = d - np.diag(np.diag(d))
    if np.abs(off).max() > 1e-12 * max(1.0, np.abs(d).max()) or not np.isclose(d[0, 0], d[1, 1]):
        raise PhysicsError("analytic pair echo needs a secular pair tensor diag(b, b, c)")
    b = d[0, 0]
    w = -system.gammas[[i, j]] * system.field
    a = hf[:, 2]
    fields = []
    for sign in (1.0, -1.0):
        delta = (w[0] - w[1]) + sign * (a[0] - a[1]) / 2
        fields.append(np.array([b, 0.0, delta]))
    hp, hm = fields
    norm_p, norm_m = np.linalg.norm(hp), np.linalg.norm(hm)
    tau = np.asarray(tau, dtype=float)
    if norm_p == 0 or norm_m == 0:
        return np.ones_like(tau)
    cross = np.linalg.norm(np.cross(hp / norm_p, hm / norm_m)) ** 2
    s_p = np.sin(np.pi * norm_p * tau)
    s_m = np.sin(np.pi * norm_m * tau)
    return 1.0 - cross * s_p ** 2 * s_m ** 2
