"""Command-line entry point: ``cespin <subcommand> [--config FILE] [--set section.key=value]``.

Every run writes its CSV outputs and a ``manifest.json`` into the output
directory (``--out``, else ``$CESPIN_OUT``, else ``run.output_dir``).
Exit codes: 0 success, 2 configuration error, 3 physics error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cce import CCESolver, enumerate_clusters
from .config import config_hash, load_config
from .constants import table as constants_table
from .curves import CoherenceCurve, export_curve, read_table, write_table
from .errors import ConfigError, PhysicsError
from .fitting import (fit_damped_cosine, fit_exponential_recovery, fit_lorentzian, fit_power_law,
                      fit_stretched_exponential)
from .lattice import load_crystal_spec, site_frames
from .noise import coherence_from_spectrum, make_spectrum, scaling_exponent_scan
from .optics import (OpticalParams, PulseTrainProtocol, estimate_fidelity, fluorescence_contrast,
                     inject_poisson_noise, odmr_sweep, population_contrast, rabi_trace,
                     simulate_protocol, steady_state_fidelity, t1_protocol_curve)
from .pulses import build_sequence, filter_function
from .scenario import central_spin_setup

log = logging.getLogger("cespin")

COMMANDS = ("bath", "cce", "filter", "scan", "pump", "odmr", "rabi", "t1", "fit", "constants")
CONVENTIONS = "docs/conventions.md"


def _sequence(kind, n, t=1.0):
    return build_sequence("ramsey", total_time=t) if kind == "ramsey" else build_sequence(kind, n, t)


def _setup(cfg):
    return central_spin_setup(
        cfg["crystal"]["file"], cfg["field"]["magnitude_mT"], cfg["field"]["direction"],
        cfg["crystal"]["central_frame"], cfg["bath"]["cutoff_nm"], tuple(cfg["bath"]["species"]),
        tuple(cfg["bath"]["exclude_classes"]),
    )


def _optics(cfg):
    o = cfg["optics"]
    return OpticalParams(o["pump_rate"], o["branching_ratio"], o["radiative_lifetime_us"], o["t1_us"],
                         o["ellipticity_leakage"], o["saturated_count_rate"])


def _protocol(cfg, gap=0.0):
    p = cfg["protocol"]
    pol = p["polarization"]
    if pol == "elliptical":
        pol = ("elliptical", p["ellipticity"])
    return PulseTrainProtocol(p["pulses_per_train"], p["pulse_duration_us"], p["pulse_spacing_us"],
                              gap, p["readout_pulses"], pol)


def run_bath(cfg, out, args):
    bath, central, system = _setup(cfg)
    spec = load_crystal_spec(cfg["crystal"]["file"])
    frames = site_frames(spec, cfg["field"]["direction"])
    a = system.hyperfine
    rows = [(bath.species[i], bath.site_classes[i], *bath.relative_positions[i], bath.distances[i],
             a[i, 2], float(np.hypot(a[i, 0], a[i, 1]))) for i in range(len(bath))]
    files = [
        write_table(out / "bath.csv", ["species", "site_class", "x(nm)", "y(nm)", "z(nm)", "distance(nm)",
                                       "a_par(MHz)", "a_perp(MHz)"], rows),
        write_table(out / "site_resonances.csv", ["frame", "g_effective", "resonance(MHz)"],
                    [(k, g, f) for k, (g, f) in
                     enumerate(zip(frames.g_effective, frames.resonances(cfg["field"]["magnitude_mT"])))]),
    ]
    counts = {c: bath.site_classes.count(c) for c in sorted(set(bath.site_classes))}
    results = {"n_spins": len(bath), "site_classes": counts, "central_g": central.effective_g,
               "resonances_MHz": frames.resonances(cfg["field"]["magnitude_mT"]).tolist()}
    return files, results


def run_cce(cfg, out, args):
    c = cfg["cce"]
    _, central, system = _setup(cfg)
    clusters = enumerate_clusters(system, c["order"], c["pair_cutoff_nm"])
    solver = CCESolver(system, clusters, args.workers, c["chunk_size"])
    seq = _sequence(c["sequence"], c["n_pulses"])
    times = np.linspace(0, c["t_max_us"], c["points"])
    dump = out / "cluster_signals.csv" if args.dump_clusters else None
    curve = solver.coherence(seq, times, dump)
    files = [export_curve(curve, out / f"{seq.name}_echo.csv")]
    if dump is not None:
        files.append(dump)
    results = {"n_spins": len(system), "n_clusters": len(clusters), "central_g": central.effective_g}
    try:
        fit = fit_stretched_exponential(curve.times, curve.magnitude)
        results.update(t2_fit_us=fit.values["t2"], stretch_k=fit.values["k"])
    except PhysicsError as exc:
        log.warning("stretched fit failed: %s", exc)
    if c["t2_scan_n"]:
        rows = []
        for n in c["t2_scan_n"]:
            t_max = c["t_max_us"] * n
            n_grid = max(1, int(np.ceil(t_max / c["t2_grid_step_us"])))
            t2 = solver.coherence_time(build_sequence("cpmg", n), t_max, n_grid, rtol=c["t2_rtol"])
            rows.append((n, t2))
            log.info("CPMG N=%d: T2 = %.4g us", n, t2)
        files.append(write_table(out / "cce_t2_scan.csv", ["n_pulses", "t2(us)"], rows))
        if len(rows) > 1:
            results["t2_scan_alpha"] = fit_power_law(*zip(*rows)).values["alpha"]
    return files, results


def run_filter(cfg, out, args):
    f = cfg["filter"]
    seq = _sequence(f["sequence"], f["n_pulses"], f["total_time_us"])
    omega = np.linspace(0, f["omega_max"], f["points"])
    curve = CoherenceCurve(omega, filter_function(seq, omega), {}, "omega", "rad/us", "F")
    return [export_curve(curve, out / "filter.csv")], {"sequence": seq.describe()}


def _spectrum(cfg):
    n = cfg["noise"]
    if n["kind"] == "lorentzian":
        return make_spectrum("lorentzian", delta2=n["delta2"], tau_c=n["tau_c_us"])
    return make_spectrum("hard_cutoff", amplitude=n["amplitude"], omega_c=n["omega_c"], power=n["power"])


def run_scan(cfg, out, args):
    n = cfg["noise"]
    spec = _spectrum(cfg)
    res = scaling_exponent_scan(spec, n["scan_n"], n["sequence"])
    files = [write_table(out / f"scan_{n['kind']}.csv", ["n_pulses", "t2(us)"], zip(res.n_values, res.t2))]
    t_hahn = float(res.t2[0])
    curve = coherence_from_spectrum(spec, n["sequence"], int(res.n_values[0]), np.linspace(0, 3 * t_hahn, 61))
    files.append(export_curve(curve, out / f"coherence_{n['kind']}.csv"))
    return files, {"alpha": res.alpha, "prefactor_us": res.prefactor, "t2_us": res.t2.tolist()}


def run_pump(cfg, out, args):
    params = _optics(cfg)
    trace = simulate_protocol(_protocol(cfg), params)
    rows = zip(trace.times, trace.counts, trace.rates, trace.train)
    files = [write_table(out / "pump_trace.csv", ["time(us)", "counts", "rate(photons/s)", "train"], rows)]
    results = {
        "steady_state_fidelity": steady_state_fidelity(params),
        "estimated_fidelity": estimate_fidelity(trace, params.branching_ratio),
        "pulse_contrast": fluorescence_contrast(trace),
        "population_contrast": population_contrast(params),
    }
    return files, results


def run_odmr(cfg, out, args):
    o = cfg["odmr"]
    freqs = np.linspace(o["center_MHz"] - o["span_MHz"] / 2, o["center_MHz"] + o["span_MHz"] / 2, o["points"])
    curve = odmr_sweep(freqs, o["center_MHz"], o["linewidth_MHz"], _optics(cfg), o["mw_rate"])
    results = {}
    if o["mw_rate"] > 0:
        fit = fit_lorentzian(curve)
        results = {"center_MHz": fit.values["center"], "fwhm_MHz": fit.values["fwhm"]}
    return [export_curve(curve, out / "odmr.csv")], results


def _rabi_curve(cfg, power):
    r = cfg["rabi"]
    omega = r["calibration"] * np.sqrt(power)
    if omega == 0:
        raise PhysicsError("zero MW power gives no Rabi oscillation to sample")
    durations = np.linspace(0, r["periods"] / omega, r["points"])
    return rabi_trace(power, durations, r["calibration"], r["detuning_sigma_MHz"], _optics(cfg), _protocol(cfg))


def run_rabi(cfg, out, args):
    r = cfg["rabi"]
    curve = _rabi_curve(cfg, r["power"])
    files = [export_curve(curve, out / "rabi.csv")]
    results = {"rabi_fit_MHz": fit_damped_cosine(curve).values["frequency"]}
    if r["powers"]:
        rows = [(p, fit_damped_cosine(_rabi_curve(cfg, p)).values["frequency"]) for p in r["powers"]]
        files.append(write_table(out / "rabi_frequencies.csv", ["power", "rabi(MHz)"], rows))
        if len(rows) > 1:
            law = fit_power_law(*zip(*rows))
            results.update(power_exponent=law.values["alpha"], calibration_fit=law.values["prefactor"])
    return files, results


def run_t1(cfg, out, args):
    t = cfg["t1"]
    gaps = np.linspace(0, t["gap_max_us"], t["points"])
    curve = t1_protocol_curve(gaps, _optics(cfg), _protocol(cfg))
    if t["noise_relative"] > 0:
        rng = np.random.default_rng(args.seed)
        curve = CoherenceCurve(curve.times, inject_poisson_noise(curve.values, t["noise_relative"], rng),
                               curve.metadata, curve.x_name, curve.x_unit, curve.y_name)
    fit = fit_exponential_recovery(curve)
    return [export_curve(curve, out / "t1_recovery.csv")], {"t1_fit_us": fit.values["t1"]}


_FITTERS = {
    "stretched_exponential": fit_stretched_exponential,
    "exponential_recovery": fit_exponential_recovery,
    "lorentzian": fit_lorentzian,
    "damped_cosine": fit_damped_cosine,
}


def run_fit(cfg, out, args):
    f = cfg["fit"]
    if not f["input"]:
        raise ConfigError("fit.input must name a CSV file")
    cols, data = read_table(f["input"])
    if not 0 < f["column"] < len(cols):
        raise ConfigError(f"fit.column {f['column']} outside the {len(cols)} columns of {f['input']}")
    x, y = data[:, 0], data[:, f["column"]]
    if f["noise_relative"] > 0:
        y = inject_poisson_noise(y, f["noise_relative"], np.random.default_rng(args.seed))
    if f["model"] == "power_law":
        result = fit_power_law(x, y)
    else:
        result = _FITTERS[f["model"]](x, y)
    path = out / "fit_result.json"
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return [path], result.values


def run_constants(cfg, out, args):
    rows = constants_table()
    return [write_table(out / "constants.csv", ["name", "value", "unit"], rows)], \
        {name: value for name, value, _ in rows}


RUNNERS = {name: globals()[f"run_{name}"] for name in COMMANDS}


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cespin", description="Ce spin qubit simulation toolkit")
    parser.add_argument("--version", action="version", version=f"cespin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML file overriding the shipped defaults")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--workers", type=int, help="worker processes for cluster evaluation")
        p.add_argument("--seed", type=int, default=0, help="seed for noise injection")
        p.add_argument("--dump-clusters", action="store_true", help="write per-cluster signals (cce)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.workers is not None:
            overrides.append(f"run.workers={args.workers}")
        cfg = load_config(args.config, overrides)
        args.workers = cfg["run"]["workers"]
        out = Path(args.out or os.environ.get("CESPIN_OUT") or cfg["run"]["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        started = time.time()
        files, results = RUNNERS[args.command](cfg, out, args)
        manifest = {
            "tool": "cespin",
            "version": __version__,
            "command": args.command,
            "config_sha256": config_hash(cfg),
            "config": cfg,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "outputs": {Path(f).name: _sha256(f) for f in files},
            "conventions": CONVENTIONS,
            "results": results,
        }
        (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PhysicsError as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    return 0


def main():
    sys.exit(run())
