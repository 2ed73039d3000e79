"""Timed layered circuits of the half-plaquette and their noisy execution.

Register layout: index 0 = Q1 (code), 1 = Q2 (syndrome), 2 = Q3 (code).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .channels import QuantumChannel
from .device import (
    DeviceParams,
    GateSpec,
    NoiseModel,
    check_layer,
    cnot_from_zx90,
    layer_channel,
    sequence_unitary,
)
from .quantum import (
    DensityMatrix,
    DimensionError,
    MINUS,
    PLUS,
    embed_operator,
    partial_trace,
    pauli_expectations,
    pauli_label,
    projector,
    tensor,
)

# syndrome bit reported for even code parity; the ideal parity operation maps
# even parity to |1> and odd parity to |0>
EVEN_PARITY_BIT = 1

CODE_QUBITS = (0, 2)
SYNDROME = 1


@dataclass(frozen=True)
class Circuit:
    """Ordered layers of parallel gates; a layer lasts as long as its longest gate."""

    n: int
    layers: tuple[tuple[GateSpec, ...], ...]
    device_qubits: tuple[int, ...] | None = None
    metadata: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        layers = tuple(tuple(layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        dq = tuple(range(self.n)) if self.device_qubits is None else tuple(self.device_qubits)
        if len(dq) != self.n:
            raise DimensionError("device_qubits must list one device qubit per register qubit")
        object.__setattr__(self, "device_qubits", dq)
        if isinstance(self.metadata, dict):
            object.__setattr__(self, "metadata", tuple(sorted(self.metadata.items())))
        for layer in layers:
            check_layer(layer, self.n)

    @classmethod
    def from_gates(cls, gates: Sequence[GateSpec], n: int, **kw) -> "Circuit":
        """As-soon-as-possible layering that keeps the per-qubit gate order."""
        layers: list[list[GateSpec]] = []
        free = [0] * n
        for g in gates:
            k = max(free[t] for t in g.targets)
            if k == len(layers):
                layers.append([])
            layers[k].append(g)
            for t in g.targets:
                free[t] = k + 1
        return cls(n, tuple(tuple(layer) for layer in layers), **kw)

    @property
    def meta(self) -> dict:
        return dict(self.metadata)

    def with_metadata(self, **kw) -> "Circuit":
        return Circuit(self.n, self.layers, self.device_qubits, {**self.meta, **kw})

    def then(self, other: "Circuit") -> "Circuit":
        if other.n != self.n:
            raise DimensionError("circuits act on different registers")
        return Circuit(self.n, self.layers + other.layers, self.device_qubits, self.meta)

    def layer_durations(self, params: DeviceParams) -> list[float]:
        return [max((g.duration(params) for g in layer), default=0.0) for layer in self.layers]

    def gates(self) -> list[GateSpec]:
        return [g for layer in self.layers for g in layer]

    def unitary(self) -> np.ndarray:
        """Ideal unitary (gate parameters included, noise excluded)."""
        return sequence_unitary(self.gates(), self.n)

    def channel(self, params: DeviceParams, noise: NoiseModel) -> QuantumChannel:
        ch = QuantumChannel.identity(self.n)
        for layer in self.layers:
            ch = layer_channel(layer, self.n, params, noise, self.device_qubits) @ ch
        return ch

    # -- serialization ---------------------------------------------------
    def to_dict(self, params: DeviceParams | None = None) -> dict:
        layers = []
        for layer in self.layers:
            out = []
            for g in layer:
                d = g.to_dict()
                if params is not None:
                    d["duration_ns"] = g.duration(params)
                out.append(d)
            layers.append(out)
        return {"n": self.n, "device_qubits": list(self.device_qubits), "layers": layers,
                "metadata": _jsonable(self.meta)}

    def to_json(self, params: DeviceParams | None = None) -> str:
        return json.dumps(self.to_dict(params), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Circuit":
        layers = tuple(tuple(GateSpec.from_dict(g) for g in layer) for layer in d["layers"])
        return cls(int(d["n"]), layers, tuple(d.get("device_qubits", range(d["n"]))), d.get("metadata", {}))

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return _jsonable(x.item())
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


@dataclass
class ExperimentResult:
    final_state: DensityMatrix
    layer_states: list[np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)


def run(circuit: Circuit, params: DeviceParams, noise: NoiseModel, initial=None,
        keep_trace: bool = False, metadata: dict | None = None) -> ExperimentResult:
    """Apply the circuit's layer channels in order to ``initial`` (default |0...0>)."""
    if initial is None:
        rho = np.zeros((2**circuit.n,) * 2, dtype=complex)
        rho[0, 0] = 1.0
    else:
        rho = np.asarray(getattr(initial, "matrix", initial), dtype=complex)
    if rho.shape != (2**circuit.n,) * 2:
        raise DimensionError(f"initial state does not match a {circuit.n}-qubit circuit")
    trace = [rho] if keep_trace else None
    for layer in circuit.layers:
        rho = layer_channel(layer, circuit.n, params, noise, circuit.device_qubits).apply(rho)
        if keep_trace:
            trace.append(rho)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    meta = {"noise": noise.to_dict(), **circuit.meta, **(metadata or {})}
    return ExperimentResult(DensityMatrix(rho), trace, meta)


# --------------------------------------------------------------------------
# Circuits of the experiment
# --------------------------------------------------------------------------


def _g(name: str, *targets: int) -> GateSpec:
    return GateSpec(name, tuple(targets))


def pcp_circuit(basis: str = "Z", simultaneous: bool = True, native: bool = False,
                even_bit: int = EVEN_PARITY_BIT) -> Circuit:
    """Parity check of the code qubits Q1, Q3 onto the syndrome Q2.

    Each CNOT is X_c, ZX90, X_c, X90_t, Z90_c. With ``simultaneous=True`` the
    two cross-resonance gates share one 350 ns layer; their syndrome
    corrections X90.X90 form a syndrome NOT which, for the even->1
    convention, cancels against the convention's own NOT. With
    ``simultaneous=False`` the two CNOTs are expanded literally one after the
    other and the convention NOT is appended.
    ``native=True`` gives the trailing control NOT zero duration.
    """
    basis = basis.upper()
    if basis not in ("Z", "X"):
        raise ValueError("basis must be 'Z' or 'X'")
    if even_bit not in (0, 1):
        raise ValueError("even_bit must be 0 or 1")
    if simultaneous:
        post_x = (0.0 if native else None)
        layers = [
            (_g("X", 0), _g("X", 2)),
            (_g("ZX90", 0, 1), _g("ZX90", 2, 1)),
            (GateSpec("X", (0,), duration_ns=post_x), GateSpec("X", (2,), duration_ns=post_x)),
            (_g("Z90", 0), _g("Z90", 2)) + ((_g("X", 1),) if even_bit == 0 else ()),
        ]
        body = Circuit(3, tuple(layers))
    else:
        gates = cnot_from_zx90(0, 1, 3, native) + cnot_from_zx90(2, 1, 3, native)
        if even_bit == 1:
            gates.append(_g("X", 1))
        # keep the literal order: one gate per time step except parallel code-qubit gates
        body = Circuit.from_gates(gates, 3)
    if basis == "X":
        h = ((_g("H", 0), _g("H", 2)),)
        body = Circuit(3, h + body.layers + h)
    return body.with_metadata(
        experiment=f"pcp_{basis.lower()}", even_parity_bit=even_bit, simultaneous=simultaneous, native=native
    )


def stabilizers(psi: np.ndarray, tol: float = 1e-9) -> list[str]:
    """Signed Pauli labels P with <psi|P|psi> = +-1, excluding the identity."""
    v = pauli_expectations(projector(psi))
    n = int(round(np.log2(len(psi))))
    out = []
    for k in range(1, 4**n):
        if abs(abs(v[k]) - 1) < tol:
            out.append(("+" if v[k] > 0 else "-") + pauli_label(k, n))
    return out


def _ideal_output(circuit: Circuit) -> np.ndarray:
    psi0 = np.zeros(2**circuit.n, dtype=complex)
    psi0[0] = 1
    return circuit.unitary() @ psi0


def ghz_circuit(order: tuple[int, int] = (0, 2)) -> Circuit:
    """Y90 on both code qubits, then both ZX90 gates onto Q2 in a single layer.

    The noiseless output is a GHZ-class state; its amplitudes and stabilizers
    are recorded in the metadata and serve as the tomography target.
    """
    zx = {0: _g("ZX90", 0, 1), 2: _g("ZX90", 2, 1)}
    c = Circuit(3, ((_g("Y90", 0), _g("Y90", 2)), tuple(zx[q] for q in order)))
    psi = _ideal_output(c)
    return c.with_metadata(experiment="ghz", target_amplitudes=_complex_list(psi), target_stabilizers=stabilizers(psi))


def pair_circuit(which: str = "q1q2") -> Circuit:
    """Y90 on one code qubit followed by ZX90 onto the syndrome; the other code qubit idles in |0>."""
    which = which.lower()
    if which not in ("q1q2", "q3q2"):
        raise ValueError("which must be 'q1q2' or 'q3q2'")
    c_q = 0 if which == "q1q2" else 2
    c = Circuit(3, ((_g("Y90", c_q),), (_g("ZX90", c_q, 1),)))
    psi = _ideal_output(c)
    pair = sorted((c_q, 1))
    return c.with_metadata(experiment=f"pair_{which}", pair=pair, target_amplitudes=_complex_list(psi),
                           target_stabilizers=stabilizers(psi))


def _complex_list(psi: np.ndarray) -> list[list[float]]:
    return [[float(np.round(a.real, 15)), float(np.round(a.imag, 15))] for a in psi]


def target_state(circuit: Circuit) -> np.ndarray:
    """Target state vector stored in a preparation circuit's metadata."""
    amps = circuit.meta.get("target_amplitudes")
    if amps is None:
        raise KeyError("circuit has no recorded target state")
    return np.array([complex(re, im) for re, im in amps])


# --------------------------------------------------------------------------
# Parity-check inputs and outcomes
# --------------------------------------------------------------------------

_KETS = {"0": np.array([1, 0], dtype=complex), "1": np.array([0, 1], dtype=complex), "+": PLUS, "-": MINUS}


def code_input_state(label: str) -> np.ndarray:
    """Three-qubit density matrix with the code qubits in ``label`` and Q2 in |0>.

    ``label`` is two characters from {0, 1, +, -} (for Q1, Q3) or ``plus-plus``.
    """
    if label == "plus-plus":
        label = "++"
    if len(label) != 2 or any(c not in _KETS for c in label):
        raise ValueError(f"invalid code input {label!r}")
    psi = tensor(_KETS[label[0]], _KETS["0"], _KETS[label[1]])
    return projector(psi)


def syndrome_probabilities(rho) -> np.ndarray:
    """Exact probabilities of the syndrome outcomes 0 and 1."""
    m = np.asarray(getattr(rho, "matrix", rho))
    d = np.real(np.diag(partial_trace(m, [SYNDROME])))
    return np.clip(d, 0, None) / d.sum()


def conditioned_code_states(rho) -> dict[int, tuple[float, np.ndarray]]:
    """{syndrome bit: (probability, normalized code-qubit state)} after a projective syndrome measurement."""
    m = np.asarray(getattr(rho, "matrix", rho))
    out = {}
    for b in (0, 1):
        p = np.zeros((2, 2), dtype=complex)
        p[b, b] = 1
        proj = embed_operator(p, [SYNDROME], 3)
        branch = partial_trace(proj @ m @ proj, CODE_QUBITS)
        prob = float(np.trace(branch).real)
        out[b] = (prob, branch / prob if prob > 1e-15 else branch)
    return out


def parity_bit(code_bits: str, even_bit: int = EVEN_PARITY_BIT) -> int:
    even = code_bits.count("1") % 2 == 0
    return even_bit if even else 1 - even_bit
