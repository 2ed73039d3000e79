"""Device parameters and the noisy gate library.

A gate is modelled as its ideal unitary, followed by T1/T2 decoherence on its
targets for the gate duration, followed by a uniform depolarizing residue.
Idle qubits in a layer decohere for the full layer duration.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .channels import QuantumChannel, average_gate_fidelity
from .quantum import I2, X, Y, Z, embed_operator, global_phase_distance, tensor
from .readout import ReadoutChannelModel

# sign s of ZX90 = exp(-i s pi/4 Z(x)X); tests are invariant under this choice
ZX_SIGN = +1

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


class UnknownGateError(KeyError):
    pass


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QubitParams:
    name: str
    t1_us: float
    t2echo_us: float
    omega_ghz: float = float("nan")
    anharmonicity_mhz: float = -340.0

    def __post_init__(self):
        if self.t1_us <= 0 or self.t2echo_us <= 0:
            raise ValueError(f"{self.name}: coherence times must be positive")
        if self.t2echo_us > 2 * self.t1_us + 1e-12:
            raise ValueError(f"{self.name}: T2echo {self.t2echo_us} exceeds 2*T1")


@dataclass(frozen=True)
class DeviceParams:
    qubits: tuple[QubitParams, ...]
    readout: tuple[ReadoutChannelModel, ...] = ()
    single_qubit_gate_ns: float = 40.0
    two_qubit_gate_ns: float = 350.0
    # per-qubit depolarizing residue of every single-qubit pulse
    single_qubit_residues: tuple[float, ...] = ()
    # ((control, target), residue) for ZX90 between device qubits
    two_qubit_residues: tuple[tuple[tuple[int, int], float], ...] = ()
    code_readout_ns: float = 4000.0

    def __post_init__(self):
        if self.single_qubit_gate_ns <= 0 or self.two_qubit_gate_ns <= 0:
            raise ValueError("gate durations must be positive")
        if not self.single_qubit_residues:
            object.__setattr__(self, "single_qubit_residues", (0.0,) * len(self.qubits))
        if any(r < 0 for r in self.single_qubit_residues) or any(r < 0 for _, r in self.two_qubit_residues):
            raise ValueError("depolarizing residues must be non-negative")

    @property
    def n(self) -> int:
        return len(self.qubits)

    def two_qubit_residue(self, a: int, b: int) -> float:
        for pair, r in self.two_qubit_residues:
            if set(pair) == {a, b}:
                return r
        return 0.0

    def with_two_qubit_residue(self, a: int, b: int, value: float) -> "DeviceParams":
        rest = tuple(item for item in self.two_qubit_residues if set(item[0]) != {a, b})
        return replace(self, two_qubit_residues=rest + (((a, b), float(value)),))

    def with_single_qubit_residue(self, q: int, value: float) -> "DeviceParams":
        res = list(self.single_qubit_residues)
        res[q] = float(value)
        return replace(self, single_qubit_residues=tuple(res))

    # -- JSON ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "qubits": [
                {"name": q.name, "omega_GHz": q.omega_ghz, "T1_us": q.t1_us, "T2echo_us": q.t2echo_us,
                 "anharmonicity_MHz": q.anharmonicity_mhz}
                for q in self.qubits
            ],
            "gates": {
                "durations_ns": {"single": self.single_qubit_gate_ns, "two": self.two_qubit_gate_ns,
                                 "code_readout": self.code_readout_ns},
                "depolarizing_residues": {
                    "single": list(self.single_qubit_residues),
                    "two": {f"{self.qubits[c].name}-{self.qubits[t].name}": r
                            for (c, t), r in self.two_qubit_residues},
                },
            },
            "readout": [m.to_dict() for m in self.readout],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceParams":
        try:
            qubits = tuple(
                QubitParams(name=q.get("name", f"Q{i + 1}"), t1_us=float(q["T1_us"]),
                            t2echo_us=float(q["T2echo_us"]), omega_ghz=float(q.get("omega_GHz", "nan")),
                            anharmonicity_mhz=float(q.get("anharmonicity_MHz", -340.0)))
                for i, q in enumerate(data["qubits"])
            )
            gates = data.get("gates", {})
            dur = gates.get("durations_ns", {})
            res = gates.get("depolarizing_residues", {})
            names = [q.name for q in qubits]
            two = []
            for key, val in res.get("two", {}).items():
                c, t = key.split("-")
                two.append(((names.index(c), names.index(t)), float(val)))
            readout = tuple(ReadoutChannelModel.from_dict(r) for r in data.get("readout", []))
            return cls(
                qubits=qubits,
                readout=readout,
                single_qubit_gate_ns=float(dur.get("single", 40.0)),
                two_qubit_gate_ns=float(dur.get("two", 350.0)),
                code_readout_ns=float(dur.get("code_readout", 4000.0)),
                single_qubit_residues=tuple(float(r) for r in res.get("single", [0.0] * len(qubits))),
                two_qubit_residues=tuple(two),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"malformed device config: {exc}") from exc


def load_device(path: str | Path | None = None, paper_noise: bool = False) -> DeviceParams:
    """Load a device JSON file.

    ``None`` loads the bundled half-plaquette device, which has coherence
    times and readout but zero gate residues. ``paper_noise=True`` loads the
    bundled variant whose residues were calibrated to the published RB errors.
    """
    if path is not None and paper_noise:
        raise ValueError("paper_noise selects a bundled device and cannot be combined with a path")
    if path is None:
        name = "paper_noise.json" if paper_noise else "half_plaquette.json"
        text = resources.files("plaqsim").joinpath(f"devices/{name}").read_text()
    else:
        text = Path(path).read_text()
    return DeviceParams.from_dict(json.loads(text))


@dataclass(frozen=True)
class NoiseModel:
    decoherence: bool = True
    gate_depolarizing: bool = True
    readout_confusion: bool = True
    # gate name -> depolarizing residue replacing the device value
    residue_overrides: tuple[tuple[str, float], ...] = ()
    # correlated ZZ dephasing probability on neighbouring qubits driven in the same layer
    crosstalk_zz: float = 0.0
    # decoherence of code qubits for the readout duration before correlators
    code_readout_decoherence: bool = False

    def __post_init__(self):
        if self.crosstalk_zz < 0 or any(v < 0 for _, v in self.residue_overrides):
            raise ValueError("noise rates must be non-negative")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(decoherence=False, gate_depolarizing=False, readout_confusion=False)

    @property
    def is_noiseless(self) -> bool:
        return not (self.decoherence or self.gate_depolarizing or self.crosstalk_zz)

    def override(self, gate: str) -> float | None:
        for name, val in self.residue_overrides:
            if name == gate:
                return val
        return None

    def to_dict(self) -> dict:
        return {
            "decoherence": self.decoherence,
            "gate_depolarizing": self.gate_depolarizing,
            "readout_confusion": self.readout_confusion,
            "residue_overrides": dict(self.residue_overrides),
            "crosstalk_zz": self.crosstalk_zz,
            "code_readout_decoherence": self.code_readout_decoherence,
        }


# --------------------------------------------------------------------------
# Decoherence channels
# --------------------------------------------------------------------------


def amplitude_damping(t_ns: float, t1_us: float) -> QuantumChannel:
    if t_ns < 0:
        raise ValueError("duration must be non-negative")
    if t1_us <= 0:
        raise ValueError("T1 must be positive")
    gamma = -np.expm1(-t_ns / (1000.0 * t1_us))
    k0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    return QuantumChannel.from_kraus([k0, k1])


def dephasing_time_us(t1_us: float, t2echo_us: float) -> float:
    """T_phi from 1/T_phi = 1/T2 - 1/(2 T1); ``inf`` when damping-limited."""
    if t2echo_us > 2 * t1_us * (1 + 1e-12):
        raise ValueError("T2echo exceeds 2*T1")
    rate = 1.0 / t2echo_us - 1.0 / (2.0 * t1_us)
    return np.inf if rate <= 0 else 1.0 / rate


def pure_dephasing(t_ns: float, t1_us: float, t2echo_us: float) -> QuantumChannel:
    """Phase-flip channel scaling coherences by exp(-t/T_phi)."""
    if t_ns < 0:
        raise ValueError("duration must be non-negative")
    t_phi = dephasing_time_us(t1_us, t2echo_us)
    lam = np.exp(-t_ns / (1000.0 * t_phi))
    return QuantumChannel.from_kraus([np.sqrt((1 + lam) / 2) * I2, np.sqrt((1 - lam) / 2) * Z])


@functools.lru_cache(maxsize=4096)
def decoherence(t_ns: float, qubit: QubitParams) -> QuantumChannel:
    return pure_dephasing(t_ns, qubit.t1_us, qubit.t2echo_us) @ amplitude_damping(t_ns, qubit.t1_us)


# --------------------------------------------------------------------------
# Gate library
# --------------------------------------------------------------------------


def rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    return expm(-0.5j * angle * axis)


def zx_unitary(angle: float = np.pi / 2, phase: float = 0.0, sign: int = ZX_SIGN) -> np.ndarray:
    """exp(-i sign (angle/2) Z(x)U) with U = cos(phase) X + sin(phase) Y."""
    u_axis = np.cos(phase) * X + np.sin(phase) * Y
    return expm(-0.5j * sign * angle * tensor(Z, u_axis))


def zx90_unitary(sign: int = ZX_SIGN) -> np.ndarray:
    return zx_unitary(np.pi / 2, 0.0, sign)


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)

_FIXED_1Q = {
    "I": I2,
    "X": rotation(X, np.pi),
    "Y": rotation(Y, np.pi),
    "Z": rotation(Z, np.pi),
    "X90": rotation(X, np.pi / 2),
    "X-90": rotation(X, -np.pi / 2),
    "Y90": rotation(Y, np.pi / 2),
    "Y-90": rotation(Y, -np.pi / 2),
    "Z90": rotation(Z, np.pi / 2),
    "Z-90": rotation(Z, -np.pi / 2),
    # Y90 pulse followed by an X pulse; equals the Hadamard up to phase
    "H": rotation(X, np.pi) @ rotation(Y, np.pi / 2),
}
SINGLE_QUBIT_GATES = tuple(_FIXED_1Q)
TWO_QUBIT_GATES = ("ZX90", "ZU180", "CNOT")
# number of 40 ns pulses in composite single-qubit gates
_PULSES = {"H": 2}


@dataclass(frozen=True)
class GateSpec:
    """A gate application. ``params`` carries (amplitude_error, phase_error) for
    cross-resonance gates; ``duration_ns``/``depolarizing_residue`` default to
    the device values when ``None``."""

    name: str
    targets: tuple[int, ...]
    duration_ns: float | None = None
    depolarizing_residue: float | None = None
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.name in _FIXED_1Q:
            k = 1
        elif self.name in TWO_QUBIT_GATES:
            k = 2
        else:
            raise UnknownGateError(self.name)
        if len(self.targets) != k:
            raise ValueError(f"{self.name} acts on {k} qubit(s), got targets {self.targets}")
        if len(set(self.targets)) != k:
            raise ValueError("repeated target")
        if self.duration_ns is not None and self.duration_ns < 0:
            raise ValueError("duration must be non-negative")

    @property
    def is_two_qubit(self) -> bool:
        return len(self.targets) == 2

    def unitary(self) -> np.ndarray:
        if self.name in _FIXED_1Q:
            return _FIXED_1Q[self.name]
        delta, phi = (tuple(self.params) + (0.0, 0.0))[:2]
        if self.name == "ZX90":
            return zx_unitary((1 + delta) * np.pi / 2, phi)
        if self.name == "ZU180":
            return zx_unitary((1 + delta) * np.pi, phi)
        return CNOT

    def duration(self, params: DeviceParams) -> float:
        if self.duration_ns is not None:
            return float(self.duration_ns)
        if self.name == "ZU180":
            return 2 * params.two_qubit_gate_ns
        if self.is_two_qubit:
            return params.two_qubit_gate_ns
        return _PULSES.get(self.name, 1) * params.single_qubit_gate_ns

    def to_dict(self) -> dict:
        out = {"gate": self.name, "targets": list(self.targets)}
        if self.duration_ns is not None:
            out["duration_ns"] = self.duration_ns
        if self.depolarizing_residue is not None:
            out["depolarizing_residue"] = self.depolarizing_residue
        if self.params:
            out["params"] = list(self.params)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GateSpec":
        return cls(d["gate"], tuple(d["targets"]), d.get("duration_ns"), d.get("depolarizing_residue"),
                   tuple(d.get("params", ())))


def _residue(spec: GateSpec, params: DeviceParams, noise: NoiseModel, device_qubits: Sequence[int]) -> float:
    if not noise.gate_depolarizing or spec.name == "I":
        return 0.0
    if spec.depolarizing_residue is not None:
        return spec.depolarizing_residue
    override = noise.override(spec.name)
    if override is not None:
        return override
    dq = [device_qubits[t] for t in spec.targets]
    if spec.is_two_qubit:
        return params.two_qubit_residue(*dq)
    r = params.single_qubit_residues[dq[0]]
    # composite gates carry one residue per pulse
    pulses = _PULSES.get(spec.name, 1)
    return 1 - (1 - r) ** pulses


def gate_channel(spec: GateSpec, params: DeviceParams, noise: NoiseModel,
                 device_qubits: Sequence[int] | None = None) -> QuantumChannel:
    """Noisy channel on the gate's own targets (ordered as ``spec.targets``).

    ``device_qubits`` maps register positions to device qubits (identity by default).
    """
    if device_qubits is None:
        device_qubits = tuple(range(params.n))
    ch = QuantumChannel.from_unitary(spec.unitary())
    k = len(spec.targets)
    if noise.decoherence:
        t = spec.duration(params)
        dec = [decoherence(t, params.qubits[device_qubits[q]]) for q in spec.targets]
        local = dec[0] if k == 1 else dec[0].tensor(dec[1])
        ch = local @ ch
    lam = _residue(spec, params, noise, device_qubits)
    if lam > 0:
        ch = QuantumChannel.depolarizing(k, lam) @ ch
    return ch


def _zz_dephasing(p: float) -> QuantumChannel:
    zz = tensor(Z, Z)
    return QuantumChannel.from_kraus([np.sqrt(1 - p) * np.eye(4), np.sqrt(p) * zz])


def sequence_unitary(gates: Sequence[GateSpec], n: int) -> np.ndarray:
    """Ideal unitary of a time-ordered gate list on n qubits."""
    u = np.eye(2**n, dtype=complex)
    for g in gates:
        u = embed_operator(g.unitary(), g.targets, n) @ u
    return u


def check_layer(gates: Sequence[GateSpec], n: int) -> None:
    """Reject layers that drive a qubit twice.

    The one exception is cross-resonance gates sharing a target with
    distinct controls: Z_a X_t and Z_b X_t commute, so they run in parallel.
    """
    seen: dict[int, list[GateSpec]] = {}
    for g in gates:
        for t in g.targets:
            if t < 0 or t >= n:
                raise ValueError("gate target outside register")
            seen.setdefault(t, []).append(g)
    for q, gs in seen.items():
        if len(gs) == 1:
            continue
        shared_target = all(g.name in ("ZX90", "ZU180") and g.targets[1] == q for g in gs)
        if not shared_target or len({g.duration_ns for g in gs}) != 1:
            raise ValueError(f"qubit {q} is targeted twice within a layer")


def _decohere(ch: QuantumChannel, times: dict[int, float], n: int, params: DeviceParams,
              device_qubits: Sequence[int]) -> QuantumChannel:
    for q, t in sorted(times.items()):
        if t > 0:
            ch = decoherence(t, params.qubits[device_qubits[q]]).embed([q], n) @ ch
    return ch


@functools.lru_cache(maxsize=8192)
def layer_channel(gates: tuple[GateSpec, ...], n: int, params: DeviceParams, noise: NoiseModel,
                  device_qubits: tuple[int, ...] | None = None) -> QuantumChannel:
    """Channel of one timed layer of parallel gates on an n-qubit register.

    Per gate this is residue . decoherence(gate time) . unitary, after which
    every qubit decoheres for the rest of the layer.
    """
    if device_qubits is None:
        device_qubits = tuple(range(n))
    check_layer(gates, n)
    duration = max((g.duration(params) for g in gates), default=0.0)
    busy: dict[int, float] = {}
    for g in gates:
        for t in g.targets:
            busy[t] = max(busy.get(t, 0.0), g.duration(params))
    ch = QuantumChannel.from_unitary(sequence_unitary(gates, n))
    if noise.decoherence:
        ch = _decohere(ch, busy, n, params, device_qubits)
    for g in gates:
        lam = _residue(g, params, noise, device_qubits)
        if lam > 0:
            ch = QuantumChannel.depolarizing(len(g.targets), lam).embed(g.targets, n) @ ch
    if noise.decoherence:
        idle = {q: duration - busy.get(q, 0.0) for q in range(n)}
        ch = _decohere(ch, idle, n, params, device_qubits)
    if noise.crosstalk_zz > 0:
        driven = sorted(t for g in gates if not g.is_two_qubit and g.name != "I" for t in g.targets)
        for a, b in zip(driven, driven[1:]):
            if abs(device_qubits[a] - device_qubits[b]) == 1:
                ch = _zz_dephasing(noise.crosstalk_zz).embed([a, b], n) @ ch
    return ch


def idle_channel(duration_ns: float, qubits: Iterable[int], n: int, params: DeviceParams,
                 noise: NoiseModel, device_qubits: tuple[int, ...] | None = None) -> QuantumChannel:
    if device_qubits is None:
        device_qubits = tuple(range(n))
    ch = QuantumChannel.identity(n)
    if noise.decoherence and duration_ns > 0:
        for q in qubits:
            ch = decoherence(duration_ns, params.qubits[device_qubits[q]]).embed([q], n) @ ch
    return ch


# --------------------------------------------------------------------------
# CNOT from ZX90
# --------------------------------------------------------------------------


def cnot_from_zx90(control: int = 0, target: int = 1, n: int = 2, native: bool = False) -> list[GateSpec]:
    """Time-ordered gates realizing CNOT(control -> target) around one ZX90.

    CNOT equals, up to global phase, X_c . ZX(-90) . X_c followed by Z90 on the
    control and X90 on the target; conjugating ZX90 by the control NOT flips its
    sign. With ``native=True`` the trailing control NOT is folded into the 350 ns
    cross-resonance primitive (ZX90 followed by NOT) and carries no extra layer.
    """
    pre = [GateSpec("X", (control,))]
    post_c = [GateSpec("X", (control,))]
    zx = GateSpec("ZX90", (control, target))
    gates = pre + [zx] + post_c + [GateSpec("X90", (target,)), GateSpec("Z90", (control,))]
    u = sequence_unitary(gates, n)
    ref = embed_operator(CNOT, (control, target), n)
    if global_phase_distance(u, ref) > 1e-12:
        raise RuntimeError("CNOT decomposition failed verification")
    if native and post_c:
        # the trailing X shares the cross-resonance slot; zero extra duration
        gates[2] = replace(gates[2], duration_ns=0.0)
    return gates


def calibrate_residue_to_fidelity(target_fidelity: float, pair: tuple[int, int], params: DeviceParams,
                                  noise: NoiseModel | None = None) -> float:
    """Depolarizing residue for ZX90 on ``pair`` giving the requested average gate fidelity."""
    noise = noise or NoiseModel()
    ideal = QuantumChannel.from_unitary(zx90_unitary())

    def f(lam):
        spec = GateSpec("ZX90", (0, 1), depolarizing_residue=lam)
        return average_gate_fidelity(ideal, gate_channel(spec, params, noise, pair)) - target_fidelity

    if f(0.0) < 0:
        raise ValueError("decoherence alone already exceeds the target error")
    return float(brentq(f, 0.0, 1.0, xtol=1e-12))
