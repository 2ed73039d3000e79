"""Command-line front end.

Every subcommand writes ``<stem>.json`` (report) and ``<stem>.csv`` (plot or
shot data) into ``--out``. Exit codes: 0 success, 2 configuration error,
3 numerical-validation failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .benchmarking import (
    DEFAULT_LENGTHS_1Q,
    DEFAULT_LENGTHS_2Q,
    RBFitError,
    build_clifford_group,
    run_rb,
    simultaneous_rb,
)
from .calibration import CalibrationError, Miscalibration, autocalibrate
from .circuits import (
    CODE_QUBITS,
    EVEN_PARITY_BIT,
    SYNDROME,
    _jsonable,
    code_input_state,
    conditioned_code_states,
    ghz_circuit,
    pair_circuit,
    pcp_circuit,
    run,
    syndrome_probabilities,
)
from .device import DeviceParams, NoiseModel, load_device
from .meastomo import MeasurementFidelityError, evaluate_maps, measurement_tomography
from .quantum import RandomStateSource, partial_trace, state_fidelity
from .readout import ReadoutChannelModel, ReadoutFitError, fit_double_gaussian, histogram, sample_shots
from .tomography import MissingCalibrationError, TomographyDesign, reconstruct, run_tomography, target_density

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

_PAIRS = {"q1q2": (0, 1), "q3q2": (2, 1)}


class ConfigError(ValueError):
    pass


class NumericalValidationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PLAQSIM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"PLAQSIM_SEED must be an integer, got {env!r}") from None


def _resolve(args) -> tuple[DeviceParams, NoiseModel, int]:
    if args.paper_noise and args.noiseless:
        raise ConfigError("--paper-noise and --noiseless are mutually exclusive")
    if args.paper_noise and args.device:
        raise ConfigError("--paper-noise selects the bundled calibrated device; drop --device")
    try:
        params = load_device(args.device, paper_noise=args.paper_noise)
    except FileNotFoundError as exc:
        raise ConfigError(f"device file not found: {exc.filename}") from exc
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from exc
    noise = NoiseModel.noiseless() if args.noiseless else NoiseModel(crosstalk_zz=getattr(args, "crosstalk", 0.0))
    if args.shots is not None and args.shots < 1:
        raise ConfigError("--shots must be positive")
    return params, noise, _seed(args)


def _config(args, params: DeviceParams, noise: NoiseModel, seed: int, **extra) -> dict:
    skip = {"func", "out", "device"}
    cli = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return _jsonable({"device": params.to_dict(), "device_file": args.device, "noise": noise.to_dict(),
                      "seed": seed, "arguments": cli, **extra})


def _write(args, stem: str, command: str, config: dict, results: dict, rows: list[list] | None,
           header: Sequence[str] | None) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"schema_version": SCHEMA_VERSION, "package_version": __version__, "command": command,
              "config": config, "results": _jsonable(results)}
    path = out / f"{stem}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if rows is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        (out / f"{stem}.csv").write_text(buf.getvalue())
    return path


def _check_state(rho: np.ndarray, what: str) -> None:
    if abs(np.trace(rho).real - 1) > 1e-8 or np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -1e-8:
        raise NumericalValidationError(f"{what} is not a valid density matrix")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _state_tomography(args, circ, qubits, stem, command):
    params, noise, seed = _resolve(args)
    src = RandomStateSource(seed)
    shots = args.shots or 20000
    final = run(circ, params, noise).final_state.matrix
    _check_state(final, "simulated state")
    target = target_density(circ, qubits)
    reduced = final if len(qubits) == circ.n else partial_trace(final, list(qubits))
    design = TomographyDesign(tuple(qubits), shots)
    rec = run_tomography(circ, design, params, noise, src=src.split(0), exact=args.exact)
    res = reconstruct(rec, target, args.resamples, src.split(1))
    results = {"state_fidelity": state_fidelity(target, reduced), "tomography": res.to_dict(),
               "target_stabilizers": circ.meta.get("target_stabilizers"), "qubits": list(qubits)}
    rows = [["".join(r), m, repr(float(c)), repr(float(e))]
            for r, cs, es in zip(design.rotations, rec.correlators, rec.stderr)
            for m, (c, e) in enumerate(zip(cs, es))]
    cfg = _config(args, params, noise, seed, shots_per_setting=shots, circuit=circ.to_dict(params))
    path = _write(args, stem, command, cfg, results, rows, ["setting", "z_subset", "correlator", "stderr"])
    print(f"{command}: fidelity {results['state_fidelity']:.4f} (tomography raw {res.fidelity_raw:.4f}, "
          f"sdp-like {res.fidelity_physical:.4f}) -> {path}")


def cmd_run_ghz(args) -> None:
    _state_tomography(args, ghz_circuit(), (0, 1, 2), "ghz", "run-ghz")


def cmd_run_pair(args) -> None:
    circ = pair_circuit(args.pair)
    _state_tomography(args, circ, tuple(circ.meta["pair"]), f"pair_{args.pair}", "run-pair")


def cmd_run_pcp(args) -> None:
    params, noise, seed = _resolve(args)
    try:
        rho_in = code_input_state(args.input)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    circ = pcp_circuit(args.basis.upper(), simultaneous=not args.sequential)
    out = run(circ, params, noise, rho_in).final_state.matrix
    _check_state(out, "parity-check output")
    p = syndrome_probabilities(out)
    even_bit = EVEN_PARITY_BIT
    branches = conditioned_code_states(out)
    shots = args.shots or 20000
    models = params.readout if noise.readout_confusion and params.readout else [ReadoutChannelModel.ideal()] * 3
    rec = sample_shots(out, list(models), shots, RandomStateSource(seed), label=f"pcp_{args.basis}")
    reported = np.bincount(rec.bits[:, SYNDROME], minlength=2) / shots
    results = {
        "even_parity_bit": even_bit,
        "syndrome_bit_probabilities": {"0": p[0], "1": p[1]},
        "syndrome_distribution": {"even": p[even_bit], "odd": p[1 - even_bit]},
        "reported_syndrome_distribution": {"even": reported[even_bit], "odd": reported[1 - even_bit]},
        "conditioned_code_states": {
            ("even" if b == even_bit else "odd"): {"probability": prob, "density_matrix": _jsonable(rho)}
            for b, (prob, rho) in branches.items()
        },
    }
    rows = [[i] + [f"{v:.6f}" for v in rec.voltages[i]] + rec.bits[i].tolist() for i in range(rec.n_shots)]
    header = ["shot_index", "q1_v", "q2_v", "q3_v", "q1_bit", "q2_bit", "q3_bit"]
    cfg = _config(args, params, noise, seed, circuit=circ.to_dict(params), code_qubits=list(CODE_QUBITS))
    stem = "pcp_{}_{}".format(args.basis, args.input.replace("+", "p").replace("-", "m") if args.input != "plus-plus"
                              else "pp")
    path = _write(args, stem, "run-pcp", cfg, results, rows, header)
    print(f"run-pcp: P(even) = {p[even_bit]:.6f}, P(odd) = {p[1 - even_bit]:.6f} -> {path}")


def cmd_run_meastomo(args) -> None:
    params, noise, seed = _resolve(args)
    src = RandomStateSource(seed)
    design = TomographyDesign(CODE_QUBITS, args.shots or 20000)
    circ = pcp_circuit("Z", simultaneous=not args.sequential)
    maps = measurement_tomography(circ, params, noise, design, src=src.split(0), exact=args.exact)
    if not maps.is_valid(1e-8):
        raise NumericalValidationError("reconstructed measurement maps are not a valid instrument")
    res = evaluate_maps(maps, args.mc_samples, src.split(1))
    results = res.to_dict()
    rows = []
    for name, ptm in res.ptms.items():
        for i, row in enumerate(ptm):
            rows.append([name, i] + [repr(float(v)) for v in row])
    cfg = _config(args, params, noise, seed, shots_per_setting=None if args.exact else design.shots_per_setting,
                  circuit=circ.to_dict(params))
    path = _write(args, "meastomo", "run-meastomo", cfg, results, rows, ["map", "row"] + [f"c{j}" for j in range(16)])
    print(f"run-meastomo: f_meas even {res.f_meas_even.value:.4f}, odd {res.f_meas_odd.value:.4f}, "
          f"unconditional {res.f_meas_unconditional.value:.4f} -> {path}")


def _parse_qubit(text: str | None) -> int:
    if text is None:
        raise ConfigError("run-rb 1q needs a qubit (Q1, Q2 or Q3)")
    t = text.upper().lstrip("Q")
    if t not in ("1", "2", "3"):
        raise ConfigError(f"unknown qubit {text!r}")
    return int(t) - 1


def cmd_run_rb(args) -> None:
    params, noise, seed = _resolve(args)
    src = RandomStateSource(seed)
    shots = args.shots or 512
    lengths = tuple(args.lengths) if args.lengths else None
    if args.mode == "1q":
        q = _parse_qubit(args.target)
        results = [run_rb(build_clifford_group(1), lengths or DEFAULT_LENGTHS_1Q, args.seeds, params, noise,
                          src=src, device_qubits=(q,), shots=shots)]
        stem = f"rb_1q_q{q + 1}"
    elif args.mode == "2q":
        pair = (args.target or "q1q2").lower()
        if pair not in _PAIRS:
            raise ConfigError(f"unknown pair {args.target!r}; use q1q2 or q3q2")
        results = [run_rb(build_clifford_group(2), lengths or DEFAULT_LENGTHS_2Q, args.seeds, params, noise,
                          src=src, device_qubits=_PAIRS[pair], shots=shots)]
        stem = f"rb_2q_{pair}"
    else:
        if args.target is not None:
            raise ConfigError("run-rb simultaneous takes no target")
        results = list(simultaneous_rb(params, noise, src=src, lengths=lengths or DEFAULT_LENGTHS_1Q,
                                       n_seeds=args.seeds, shots=shots))
        stem = "rb_simultaneous"
    rows = []
    for k, res in enumerate(results):
        label = f"Q{res.metadata['qubit'] + 1}" if "qubit" in res.metadata else stem
        for m, s, e in zip(res.lengths, res.survival, res.stderr):
            rows.append([label, m, repr(float(s)), repr(float(e))])
    cfg = _config(args, params, noise, seed, shots_per_sequence=shots)
    out = {"fits": [r.to_dict() for r in results]}
    path = _write(args, stem, "run-rb", cfg, out, rows, ["series", "m", "survival", "stderr"])
    print("run-rb: " + ", ".join(f"r = {r.r:.3e} +- {r.r_stderr:.1e}" for r in results) + f" -> {path}")


def cmd_calibrate(args) -> None:
    params, noise, seed = _resolve(args)
    try:
        initial = Miscalibration(args.delta, args.phi)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    src = RandomStateSource(seed)
    res = autocalibrate(initial, params, noise, args.max_iters, shots=args.shots, src=src,
                        raise_on_failure=False)
    rows = [[it["iteration"], it["N"], repr(it["amplitude_signal"]), repr(it["phase_signal"]),
             repr(it["residual"][0]), repr(it["residual"][1])] for it in res.iterations]
    cfg = _config(args, params, noise, seed)
    path = _write(args, "calibration", "calibrate", cfg, res.to_dict(), rows,
                  ["iteration", "N", "amplitude_signal", "phase_signal", "delta_residual", "phi_residual"])
    if not res.converged:
        raise NumericalValidationError(f"calibration did not converge in {args.max_iters} iterations ({path})")
    print(f"calibrate: residual delta {res.final.amplitude_error:.2e}, phi {res.final.phase_error:.2e} "
          f"after {len(res.iterations)} iterations -> {path}")


def cmd_histogram(args) -> None:
    params, noise, seed = _resolve(args)
    shots = args.shots or 10000
    models = params.readout if noise.readout_confusion and params.readout else [ReadoutChannelModel.ideal()] * 3
    src = RandomStateSource(seed)
    results = {}
    rows = []
    for q, model in enumerate(models):
        g = src.split(q).generator
        v0 = model.sample_voltages(np.zeros(shots, dtype=int), g)
        v1 = model.sample_voltages(np.ones(shots, dtype=int), g)
        lo, hi = float(min(v0.min(), v1.min())), float(max(v0.max(), v1.max()))
        entry = {"prep0": histogram(v0, args.bins, (lo, hi)), "prep1": histogram(v1, args.bins, (lo, hi)),
                 "assignment_fidelity_model": model.assignment_fidelity(),
                 "assignment_fidelity_empirical": 1 - 0.5 * (np.mean(model.assign(v0)) + np.mean(1 - model.assign(v1)))}
        fits = {}
        for s, v in (("prep0", v0), ("prep1", v1)):
            fit = fit_double_gaussian(v)
            fits[s] = {"components": list(fit.as_tuple()), "ratio": fit.ratio, "converged": fit.converged}
        entry["double_gaussian_fits"] = fits
        results[f"Q{q + 1}"] = entry
        for i in range(shots):
            rows.append([f"Q{q + 1}", i, f"{v0[i]:.6f}", f"{v1[i]:.6f}"])
    cfg = _config(args, params, noise, seed, shots_per_preparation=shots)
    path = _write(args, "histogram", "histogram", cfg, results, rows, ["qubit", "shot_index", "v_prep0", "v_prep1"])
    print("histogram: " + ", ".join(f"{k} F_a {v['assignment_fidelity_empirical']:.3f}" for k, v in results.items())
          + f" -> {path}")


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--device", help="device JSON file (default: bundled half-plaquette device)")
    common.add_argument("--paper-noise", action="store_true",
                        help="bundled device with gate residues calibrated to the published RB errors")
    common.add_argument("--noiseless", action="store_true", help="disable decoherence, gate and readout errors")
    common.add_argument("--seed", type=int, default=None, help="random seed (fallback: PLAQSIM_SEED, then 0)")
    common.add_argument("--shots", type=int, default=None, help="shots per setting or sequence")
    common.add_argument("--out", default=".", help="output directory")

    p = argparse.ArgumentParser(prog="plaqsim", description="Half-plaquette parity-check simulator")
    p.add_argument("--version", action="version", version=f"plaqsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("run-ghz", cmd_run_ghz, "GHZ preparation and state tomography"),
                               ("run-pair", cmd_run_pair, "two-qubit entangled pair and tomography")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        if name == "run-pair":
            sp.add_argument("pair", choices=sorted(_PAIRS))
        sp.add_argument("--exact", action="store_true", help="use exact probabilities instead of sampled shots")
        sp.add_argument("--resamples", type=int, default=200, help="bootstrap resamples")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("run-pcp", parents=[common], help="parity check on a code-qubit input")
    sp.add_argument("basis", choices=["z", "x"])
    sp.add_argument("--input", required=True, help="two characters from 0 1 + - (Q1 then Q3), or plus-plus")
    sp.add_argument("--sequential", action="store_true", help="run the two CNOTs one after the other")
    sp.set_defaults(func=cmd_run_pcp)

    sp = sub.add_parser("run-meastomo", parents=[common], help="measurement tomography of the Z parity check")
    sp.add_argument("--exact", action="store_true")
    sp.add_argument("--sequential", action="store_true")
    sp.add_argument("--mc-samples", type=int, default=150_000, help="Monte Carlo states for the fidelity")
    sp.set_defaults(func=cmd_run_meastomo)

    sp = sub.add_parser("run-rb", parents=[common], help="randomized benchmarking")
    sp.add_argument("mode", choices=["1q", "2q", "simultaneous"])
    sp.add_argument("target", nargs="?", help="qubit (Q1..Q3) for 1q, pair (q1q2, q3q2) for 2q")
    sp.add_argument("--seeds", type=int, default=35, help="random sequences per length")
    sp.add_argument("--lengths", type=int, nargs="+", help="sequence lengths")
    sp.add_argument("--crosstalk", type=float, default=0.0, help="ZZ crosstalk between simultaneously driven neighbours")
    sp.set_defaults(func=cmd_run_rb)

    sp = sub.add_parser("calibrate", parents=[common], help="closed-loop ZX90 amplitude and phase calibration")
    sp.add_argument("--delta", type=float, default=0.02, help="true amplitude error")
    sp.add_argument("--phi", type=float, default=0.05, help="true phase error (rad)")
    sp.add_argument("--max-iters", type=int, default=10)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("histogram", parents=[common], help="single-shot readout histograms")
    sp.add_argument("--bins", type=int, default=100)
    sp.set_defaults(func=cmd_histogram)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ConfigError, MissingCalibrationError) as exc:
        print(f"plaqsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalValidationError, MeasurementFidelityError, RBFitError, CalibrationError, ReadoutFitError,
            np.linalg.LinAlgError) as exc:
        print(f"plaqsim: numerical validation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
