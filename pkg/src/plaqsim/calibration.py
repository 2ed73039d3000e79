"""Repeated-pulse calibration of the ZX90 amplitude and drive phase.

Amplitude: 2N-1 consecutive ZX90 pulses on |00>; the target population sits
at 1/2 for a perfect pulse and drifts away as sin^2((2N-1)(1+delta)pi/4).
Phase: IY90 (ZU180 IX)^N IX90 on |00>; a drive-axis offset phi walks the
target Bloch vector by 2 phi per repetition.

Both signals are inverted against the noiseless model of the same sequence
within its monotonic capture window, and the loop applies the estimate as a
correction.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .circuits import Circuit, _jsonable
from .device import DeviceParams, GateSpec, NoiseModel
from .quantum import RandomStateSource

N_SCHEDULE = (1, 2, 3, 5, 9)
DEFAULT_SHOTS = 512
TARGET_SIGNAL = 0.5
# the control stays in |0>, so the ideal signal is 1/2 for every N
PREPARATION = "|00> (control, target)"


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Miscalibration:
    amplitude_error: float = 0.0
    phase_error: float = 0.0

    def __post_init__(self):
        if abs(self.amplitude_error) >= 0.5 or abs(self.phase_error) >= np.pi:
            raise ValueError("miscalibration outside |delta| < 0.5, |phi| < pi")

    @property
    def params(self) -> tuple[float, float]:
        return (self.amplitude_error, self.phase_error)

    def corrected(self, d_amp: float, d_phase: float) -> "Miscalibration":
        return Miscalibration(self.amplitude_error - d_amp, self.phase_error - d_phase)


@dataclass
class CalibrationTrace:
    kind: str
    n_values: tuple[int, ...]
    signals: tuple[float, ...]
    target: float = TARGET_SIGNAL
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not 0.0 <= s <= 1.0 for s in self.signals):
            raise ValueError("signals must be populations in [0, 1]")

    @property
    def deviations(self) -> np.ndarray:
        return np.asarray(self.signals) - self.target

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def amplitude_circuit(n_rep: int, miscal: Miscalibration, pair: tuple[int, int] = (0, 1)) -> Circuit:
    if n_rep < 1:
        raise ValueError("N must be at least 1")
    zx = GateSpec("ZX90", (0, 1), params=miscal.params)
    return Circuit(2, tuple((zx,) for _ in range(2 * n_rep - 1)), pair,
                   {"experiment": "amplitude_cal", "N": n_rep, "preparation": PREPARATION})


def phase_circuit(n_rep: int, miscal: Miscalibration, pair: tuple[int, int] = (0, 1)) -> Circuit:
    if n_rep < 1:
        raise ValueError("N must be at least 1")
    zu = GateSpec("ZU180", (0, 1), params=miscal.params)
    layers = [(GateSpec("Y90", (1,)),)]
    for _ in range(n_rep):
        layers += [(zu,), (GateSpec("X", (1,)),)]
    layers.append((GateSpec("X90", (1,)),))
    return Circuit(2, tuple(layers), pair, {"experiment": "phase_cal", "N": n_rep, "preparation": PREPARATION})


def _target_population(circ: Circuit, params: DeviceParams, noise: NoiseModel,
                       shots: int | None, src: RandomStateSource | None) -> float:
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = 1.0
    out = circ.channel(params, noise).apply(rho)
    p1 = float(np.clip(out[1, 1].real + out[3, 3].real, 0.0, 1.0))
    if noise.readout_confusion and params.readout:
        m = params.readout[circ.device_qubits[1]].assignment_matrix()
        p1 = (1 - p1) * m[0, 1] + p1 * m[1, 1]
    if shots is None:
        return p1
    if src is None:
        raise ValueError("a RandomStateSource is required when sampling shots")
    return src.generator.binomial(shots, p1) / shots


def amplitude_cal_sequence(n_rep: int, miscal: Miscalibration, params: DeviceParams,
                           noise: NoiseModel | None = None, shots: int | None = None,
                           src: RandomStateSource | None = None, pair: tuple[int, int] = (0, 1)) -> float:
    """Target excited population after 2N-1 ZX90 pulses."""
    return _target_population(amplitude_circuit(n_rep, miscal, pair), params,
                              noise or NoiseModel.noiseless(), shots, src)


def phase_cal_sequence(n_rep: int, miscal: Miscalibration, params: DeviceParams,
                       noise: NoiseModel | None = None, shots: int | None = None,
                       src: RandomStateSource | None = None, pair: tuple[int, int] = (0, 1)) -> float:
    """Target excited population after IY90 (ZU180 IX)^N IX90."""
    return _target_population(phase_circuit(n_rep, miscal, pair), params,
                              noise or NoiseModel.noiseless(), shots, src)


def calibration_trace(kind: str, miscal: Miscalibration, params: DeviceParams, noise: NoiseModel | None = None,
                      n_values: Sequence[int] = N_SCHEDULE, shots: int | None = None,
                      src: RandomStateSource | None = None) -> CalibrationTrace:
    fn = {"amplitude": amplitude_cal_sequence, "phase": phase_cal_sequence}[kind]
    sig = []
    for i, n_rep in enumerate(n_values):
        sub = src.split(i) if src is not None else None
        sig.append(fn(n_rep, miscal, params, noise, shots, sub))
    return CalibrationTrace(kind, tuple(n_values), tuple(sig),
                            metadata={"preparation": PREPARATION, "miscalibration": list(miscal.params),
                                      "shots": shots})


def _invert(kind: str, n_rep: int, signal: float, params: DeviceParams, other: float) -> float:
    """Parameter value whose noiseless signal equals ``signal`` inside the capture window."""
    if kind == "amplitude":
        half = 1.0 / (2 * n_rep - 1)  # |(2N-1) delta| < 1 keeps the signal monotonic
        f = lambda x: amplitude_cal_sequence(n_rep, Miscalibration(x, other), params) - signal
    else:
        half = np.pi / (4 * n_rep)  # |2 N phi| < pi / 2
        f = lambda x: phase_cal_sequence(n_rep, Miscalibration(other, x), params) - signal
    lo, hi = -0.999 * min(half, 0.49), 0.999 * min(half, 0.49)
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        # saturated signal: clamp to the nearer window edge
        return lo if abs(flo) < abs(fhi) else hi
    return float(brentq(f, lo, hi, xtol=1e-14))


@dataclass
class CalibrationResult:
    initial: Miscalibration
    final: Miscalibration
    iterations: list[dict]
    converged: bool

    def to_dict(self) -> dict:
        return _jsonable({"initial": asdict(self.initial), "final": asdict(self.final),
                          "iterations": self.iterations, "converged": self.converged})

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def autocalibrate(initial: Miscalibration, params: DeviceParams, noise: NoiseModel | None = None,
                  max_iters: int = 10, schedule: Sequence[int] = N_SCHEDULE, shots: int | None = None,
                  src: RandomStateSource | None = None, amplitude_tol: float = 1e-3, phase_tol: float = 2e-3,
                  drift_sigma: float = 0.0, raise_on_failure: bool = True) -> CalibrationResult:
    """Closed-loop tune-up of (delta, phi).

    Iteration i measures at N = schedule[i] (the last entry repeats), first
    the amplitude and then the phase, and subtracts both estimates. ``initial``
    is the true miscalibration, which the loop does not see. The loop stops
    once both estimates are inside the tolerances; an estimate inside its
    tolerance is not applied. ``drift_sigma`` adds a Gaussian random walk on
    the true phase between iterations.
    """
    if abs(initial.amplitude_error) > 0.1 or abs(initial.phase_error) > 0.2:
        raise CalibrationError("initial miscalibration is outside the capture range")
    noise = noise or NoiseModel.noiseless()
    if (shots is not None or drift_sigma > 0) and src is None:
        raise ValueError("a RandomStateSource is required for shot noise or drift")
    cal = initial
    log = []
    converged = False
    for it in range(max_iters):
        n_rep = schedule[min(it, len(schedule) - 1)]
        sub = src.split(it) if src is not None else None
        s_amp = amplitude_cal_sequence(n_rep, cal, params, noise, shots, sub.split(0) if sub else None)
        d_amp = _invert("amplitude", n_rep, s_amp, params, 0.0)
        if abs(d_amp) >= amplitude_tol:
            cal = cal.corrected(d_amp, 0.0)
        s_ph = phase_cal_sequence(n_rep, cal, params, noise, shots, sub.split(1) if sub else None)
        d_ph = _invert("phase", n_rep, s_ph, params, 0.0)
        if abs(d_ph) >= phase_tol:
            cal = cal.corrected(0.0, d_ph)
        log.append({"iteration": it + 1, "N": n_rep, "amplitude_signal": s_amp, "phase_signal": s_ph,
                    "amplitude_estimate": d_amp, "phase_estimate": d_ph,
                    "residual": [cal.amplitude_error, cal.phase_error]})
        if abs(d_amp) < amplitude_tol and abs(d_ph) < phase_tol:
            converged = True
            break
        if drift_sigma > 0:
            cal = Miscalibration(cal.amplitude_error, cal.phase_error + sub.generator.normal(0, drift_sigma))
    if not converged and raise_on_failure:
        raise CalibrationError(f"calibration did not converge in {max_iters} iterations")
    return CalibrationResult(initial, cal, log, converged)
