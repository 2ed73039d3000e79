"""Clifford randomized benchmarking.

Clifford elements are identified up to global phase by the signed Pauli
images of the generators X_k and Z_k, i.e. the generator columns of the PTM.
Single-qubit elements are shortest words over X/Y pulses; two-qubit elements
alternate local Clifford layers with ZX90 and use the minimal number of ZX90.
"""
from __future__ import annotations

import csv
import functools
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, curve_fit

from .channels import QuantumChannel, average_gate_fidelity
from .circuits import Circuit, _jsonable
from .device import (
    _FIXED_1Q,
    DeviceParams,
    GateSpec,
    NoiseModel,
    layer_channel,
    zx90_unitary,
)
from .quantum import RandomStateSource, global_phase_distance, pauli_basis
from .readout import ReadoutChannelModel

GENERATORS_1Q = ("X90", "Y90", "X", "Y", "X-90", "Y-90")
DEFAULT_LENGTHS_1Q = (1, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
DEFAULT_LENGTHS_2Q = (1, 2, 4, 6, 8, 10, 15, 20, 25, 30, 35, 40)
DEFAULT_SEEDS = 35
DEFAULT_SHOTS = 512

# published error per Clifford used to calibrate the gate residues
TARGET_R_1Q = (3.06e-3, 2.30e-3, 2.77e-3)
TARGET_R_2Q = {(0, 1): 0.058, (2, 1): 0.065}


class RBFitError(RuntimeError):
    pass


def _generator_columns(n: int) -> np.ndarray:
    # Pauli indices of X_k and Z_k for every qubit k
    cols = []
    for k in range(n):
        for p in (1, 3):
            cols.append(p * 4 ** (n - 1 - k))
    return np.array(cols)


def clifford_keys(unitaries: np.ndarray) -> list[bytes]:
    """Phase-free hash of Clifford unitaries (batch of shape (N, d, d))."""
    u = np.asarray(unitaries)
    d = u.shape[-1]
    n = d.bit_length() - 1
    basis = pauli_basis(n)
    gens = basis[_generator_columns(n)]
    images = u[:, None] @ gens[None] @ u.conj().swapaxes(-1, -2)[:, None]
    cols = np.einsum("iab,ngba->ngi", basis, images).real / d
    ints = np.rint(cols).astype(np.int8)
    if np.abs(cols - ints).max() > 1e-6:
        raise ValueError("unitary is not a Clifford element")
    return [row.tobytes() for row in ints]


@dataclass
class CliffordGroup:
    """Clifford group on n = 1 or 2 qubits with gate decompositions.

    ``words[i]`` is a time-ordered decomposition: for n = 1 a tuple of
    single-qubit gate names; for n = 2 a tuple of items that are either
    ``("L", a, b)`` (single-qubit Cliffords a on qubit 0 and b on qubit 1)
    or ``("ZX90",)``.
    """

    n: int
    unitaries: np.ndarray
    words: list[tuple]
    index: dict[bytes, int]
    local: "CliffordGroup | None" = None

    def __len__(self) -> int:
        return len(self.words)

    def lookup(self, u: np.ndarray) -> int:
        return self.index[clifford_keys(u[None])[0]]

    def compose(self, first: int, second: int) -> int:
        """Index of ``second`` applied after ``first``."""
        return self.lookup(self.unitaries[second] @ self.unitaries[first])

    def inverse(self, i: int) -> int:
        return self.lookup(self.unitaries[i].conj().T)

    def zx_count(self, i: int) -> int:
        return sum(1 for item in self.words[i] if item[0] == "ZX90") if self.n == 2 else 0

    @property
    def mean_zx_count(self) -> float:
        return float(np.mean([self.zx_count(i) for i in range(len(self))]))

    def gate_layers(self, i: int, qubits: Sequence[int] = (0, 1)) -> list[tuple[GateSpec, ...]]:
        """Parallel layers realizing element ``i`` on register positions ``qubits``."""
        if self.n == 1:
            return [(GateSpec(g, (qubits[0],)),) for g in self.words[i]]
        layers: list[tuple[GateSpec, ...]] = []
        for item in self.words[i]:
            if item[0] == "ZX90":
                layers.append((GateSpec("ZX90", (qubits[0], qubits[1])),))
                continue
            wa = [g for g in self.local.words[item[1]] if g != "I"]
            wb = [g for g in self.local.words[item[2]] if g != "I"]
            for ga, gb in itertools.zip_longest(wa, wb):
                layer = []
                if ga:
                    layer.append(GateSpec(ga, (qubits[0],)))
                if gb:
                    layer.append(GateSpec(gb, (qubits[1],)))
                layers.append(tuple(layer))
        return layers


def _build_1q() -> CliffordGroup:
    # breadth-first search gives the shortest pulse word for every element
    start = np.eye(2, dtype=complex)
    words = [("I",)]
    unitaries = [start]
    index = {clifford_keys(start[None])[0]: 0}
    frontier = [(start, ())]
    while frontier:
        nxt = []
        for u, word in frontier:
            for g in GENERATORS_1Q:
                v = _FIXED_1Q[g] @ u
                key = clifford_keys(v[None])[0]
                if key not in index:
                    index[key] = len(words)
                    words.append(word + (g,))
                    unitaries.append(v)
                    nxt.append((v, word + (g,)))
        frontier = nxt
    return CliffordGroup(1, np.array(unitaries), words, index)


def _build_2q(c1: CliffordGroup) -> CliffordGroup:
    pairs = list(itertools.product(range(len(c1)), repeat=2))
    local_u = np.array([np.kron(c1.unitaries[a], c1.unitaries[b]) for a, b in pairs])
    zx = zx90_unitary()
    unitaries = list(local_u)
    words: list[tuple] = [(("L", a, b),) for a, b in pairs]
    index = {k: i for i, k in enumerate(clifford_keys(local_u))}
    level = list(range(len(words)))
    while level:
        cand = np.array([zx @ unitaries[i] for i in level])
        keys = clifford_keys(cand)
        new_level = []
        for i, key, h in zip(level, keys, cand):
            if key in index:
                continue
            # whole left coset of local Cliffords joins this level
            coset = local_u @ h
            for (a, b), ck, g in zip(pairs, clifford_keys(coset), coset):
                if ck in index:
                    continue
                index[ck] = len(words)
                words.append(words[i] + (("ZX90",), ("L", a, b)))
                unitaries.append(g)
                new_level.append(index[ck])
        level = new_level
    return CliffordGroup(2, np.array(unitaries), words, index, local=c1)


@functools.lru_cache(maxsize=2)
def build_clifford_group(n: int) -> CliffordGroup:
    """24 single-qubit or 11520 two-qubit Clifford elements."""
    if n == 1:
        return _build_1q()
    if n == 2:
        return _build_2q(build_clifford_group(1))
    raise ValueError("Clifford groups are built for n = 1 or 2 only")


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------


@dataclass
class RBSequence:
    m: int
    elements: tuple[int, ...]
    recovery: int
    circuit: Circuit

    @property
    def all_elements(self) -> tuple[int, ...]:
        return self.elements + (self.recovery,)


def _recovery(group: CliffordGroup, elements: Sequence[int]) -> int:
    u = np.eye(2**group.n, dtype=complex)
    for e in elements:
        u = group.unitaries[e] @ u
    return group.lookup(u.conj().T)


def generate_rb_sequence(group: CliffordGroup, m: int, src: RandomStateSource | None = None,
                         elements: Sequence[int] | None = None,
                         device_qubits: tuple[int, ...] | None = None) -> RBSequence:
    """m uniformly random Cliffords plus the recovery element."""
    if m < 1:
        raise ValueError("sequence length must be at least 1")
    if elements is None:
        if src is None:
            raise ValueError("either a RandomStateSource or explicit elements are required")
        elements = src.generator.integers(len(group), size=m)
    elements = tuple(int(e) for e in elements)
    if len(elements) != m:
        raise ValueError("number of elements does not match m")
    rec = _recovery(group, elements)
    layers = [layer for e in elements + (rec,) for layer in group.gate_layers(e, tuple(range(group.n)))]
    circ = Circuit(group.n, tuple(layers), device_qubits)
    if global_phase_distance(circ.unitary(), np.eye(2**group.n)) > 1e-10:
        raise AssertionError("compiled RB sequence does not compose to the identity")
    return RBSequence(m, elements, rec, circ)


# --------------------------------------------------------------------------
# Simulation and fitting
# --------------------------------------------------------------------------


@dataclass
class RBResult:
    n: int
    lengths: tuple[int, ...]
    survival: np.ndarray
    stderr: np.ndarray
    a: float
    b: float
    p: float
    p_stderr: float
    reduced_chi2: float
    metadata: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return 2**self.n

    @property
    def r(self) -> float:
        return (1 - self.p) * (self.d - 1) / self.d

    @property
    def r_stderr(self) -> float:
        return self.p_stderr * (self.d - 1) / self.d

    def to_dict(self) -> dict:
        return _jsonable({
            "n_qubits": self.n, "lengths": list(self.lengths), "survival": self.survival,
            "stderr": self.stderr, "fit": {"A": self.a, "B": self.b, "p": self.p, "p_stderr": self.p_stderr},
            "r": self.r, "r_stderr": self.r_stderr, "reduced_chi2": self.reduced_chi2,
            "metadata": self.metadata,
        })

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "survival", "stderr"])
        for m, s, e in zip(self.lengths, self.survival, self.stderr):
            w.writerow([m, repr(float(s)), repr(float(e))])
        return buf.getvalue()


def _decay(m, a, p, b):
    return a * p**m + b


def fit_decay(lengths: Sequence[int], survival: Sequence[float], stderr: Sequence[float] | None,
              n: int) -> tuple[float, float, float, float, float]:
    """Weighted fit of A p^m + B; returns (A, B, p, stderr of p, reduced chi-square)."""
    m = np.asarray(lengths, dtype=float)
    y = np.asarray(survival, dtype=float)
    if len(m) < 4:
        raise RBFitError("at least four lengths are needed for a three-parameter fit")
    sigma = None if stderr is None else np.asarray(stderr, dtype=float)
    weighted = sigma is not None and np.all(sigma > 0)
    d = 2**n
    p0 = (max(y[0] - 1 / d, 1e-3), 0.99, 1 / d)
    try:
        popt, pcov = curve_fit(_decay, m, y, p0=p0, sigma=sigma if weighted else None,
                               absolute_sigma=weighted, bounds=([0, 0, 0], [1.5, 1, 1]), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise RBFitError(f"decay fit did not converge: {exc}") from exc
    resid = y - _decay(m, *popt)
    dof = len(m) - 3
    chi2 = float(np.sum((resid / sigma) ** 2) / dof) if weighted and dof > 0 else float("nan")
    return float(popt[0]), float(popt[2]), float(popt[1]), float(np.sqrt(pcov[1, 1])), chi2


def _ground_probability(rho_vec: np.ndarray, d: int, models) -> float:
    p = np.clip(np.real(rho_vec.reshape(d, d).diagonal()), 0, None)
    if models is None:
        return float(p[0])
    # probability that every qubit is reported as 0
    w = np.ones(1)
    for m in models:
        w = np.kron(w, m.assignment_matrix()[:, 0])
    return float(p @ w)


class _CliffordChannels:
    """Noisy superoperator of every Clifford element, built on demand."""

    def __init__(self, group, params, noise, device_qubits, depolarizing):
        self.group = group
        self.params = params
        self.noise = noise
        self.dq = device_qubits
        self.depolarizing = depolarizing
        self.cache: dict[int, np.ndarray] = {}

    def __call__(self, i: int) -> np.ndarray:
        s = self.cache.get(i)
        if s is None:
            n = self.group.n
            if self.depolarizing is not None:
                u = self.group.unitaries[i]
                lam = self.depolarizing * 2**n / (2**n - 1)
                ch = QuantumChannel.depolarizing(n, lam) @ QuantumChannel.from_unitary(u)
            else:
                ch = QuantumChannel.identity(n)
                for layer in self.group.gate_layers(i, tuple(range(n))):
                    ch = layer_channel(layer, n, self.params, self.noise, self.dq) @ ch
            s = ch.superop
            self.cache[i] = s
        return s


def _rb_models(readout, params: DeviceParams, noise: NoiseModel, device_qubits):
    if not noise.readout_confusion:
        return None
    models = readout if readout is not None else params.readout
    if not models:
        return None
    return [models[q] for q in device_qubits]


def run_rb(group: CliffordGroup, lengths: Sequence[int] | None = None, n_seeds: int = DEFAULT_SEEDS,
           params: DeviceParams | None = None, noise: NoiseModel | None = None,
           readout: Sequence[ReadoutChannelModel] | None = None, src: RandomStateSource | None = None,
           device_qubits: tuple[int, ...] | None = None, shots: int | None = DEFAULT_SHOTS,
           depolarizing_per_clifford: float | None = None) -> RBResult:
    """Average ground-state survival versus sequence length, fitted to A p^m + B.

    ``device_qubits`` places the register on the device (for n = 2 the first
    entry is the ZX90 control). With ``depolarizing_per_clifford`` set, every
    Clifford is the ideal unitary followed by depolarizing noise with that
    error per Clifford, and all other noise is off. ``shots=None`` uses
    exact probabilities.
    """
    n = group.n
    d = 2**n
    lengths = tuple(int(m) for m in (lengths or (DEFAULT_LENGTHS_1Q if n == 1 else DEFAULT_LENGTHS_2Q)))
    if any(b <= a for a, b in zip(lengths, lengths[1:])) or lengths[0] < 1:
        raise ValueError("lengths must be positive and strictly increasing")
    if params is None:
        raise ValueError("device parameters are required")
    noise = noise or NoiseModel()
    src = src or RandomStateSource(0)
    device_qubits = device_qubits or ((0, 1) if n == 2 else (0,))
    if depolarizing_per_clifford is not None:
        noise = NoiseModel.noiseless()
    models = _rb_models(readout, params, noise, device_qubits)
    channels = _CliffordChannels(group, params, noise, device_qubits, depolarizing_per_clifford)
    rho0 = np.zeros(d * d, dtype=complex)
    rho0[0] = 1.0
    data = np.empty((len(lengths), n_seeds))
    for li, m in enumerate(lengths):
        for s in range(n_seeds):
            sub = src.split(li * 100_000 + s)
            elements = sub.generator.integers(len(group), size=m)
            vec = rho0
            for e in tuple(elements) + (_recovery(group, elements),):
                vec = channels(int(e)) @ vec
            p = _ground_probability(vec, d, models)
            if shots is None:
                data[li, s] = p
            else:
                data[li, s] = sub.split(1).generator.binomial(shots, min(max(p, 0.0), 1.0)) / shots
    mean = data.mean(axis=1)
    stderr = data.std(axis=1, ddof=1) / np.sqrt(n_seeds) if n_seeds > 1 else np.zeros(len(lengths))
    a, b, p, p_se, chi2 = fit_decay(lengths, mean, stderr, n)
    meta = {"n_seeds": n_seeds, "shots": shots, "device_qubits": list(device_qubits), "seed": src.seed,
            "depolarizing_per_clifford": depolarizing_per_clifford}
    return RBResult(n, lengths, mean, stderr, a, b, p, p_se, chi2, meta)


def simultaneous_rb(params: DeviceParams, noise: NoiseModel | None = None,
                    readout: Sequence[ReadoutChannelModel] | None = None, src: RandomStateSource | None = None,
                    lengths: Sequence[int] = DEFAULT_LENGTHS_1Q, n_seeds: int = DEFAULT_SEEDS,
                    shots: int | None = DEFAULT_SHOTS) -> tuple[RBResult, ...]:
    """Independent single-qubit Clifford streams on all qubits in shared layers."""
    noise = noise or NoiseModel()
    src = src or RandomStateSource(0)
    group = build_clifford_group(1)
    nq = params.n
    lengths = tuple(int(m) for m in lengths)
    models = _rb_models(readout, params, noise, tuple(range(nq)))
    rho0 = np.zeros(4**nq, dtype=complex)
    rho0[0] = 1.0
    data = np.empty((nq, len(lengths), n_seeds))
    for li, m in enumerate(lengths):
        for s in range(n_seeds):
            sub = src.split(li * 100_000 + s)
            streams = sub.generator.integers(len(group), size=(nq, m))
            vec = rho0
            for step in range(m + 1):
                words = []
                for q in range(nq):
                    e = streams[q, step] if step < m else _recovery(group, streams[q])
                    words.append(group.words[int(e)])
                for gates in itertools.zip_longest(*words):
                    layer = tuple(GateSpec(g, (q,)) for q, g in enumerate(gates) if g is not None)
                    vec = layer_channel(layer, nq, params, noise, None).superop @ vec
            rho = vec.reshape(2**nq, 2**nq)
            diag = np.clip(np.real(rho.diagonal()), 0, None).reshape([2] * nq)
            for q in range(nq):
                pq = diag.sum(axis=tuple(k for k in range(nq) if k != q))
                p0 = pq @ models[q].assignment_matrix()[:, 0] if models else pq[0]
                if shots is None:
                    data[q, li, s] = p0
                else:
                    data[q, li, s] = sub.split(10 + q).generator.binomial(shots, min(max(p0, 0.0), 1.0)) / shots
    out = []
    for q in range(nq):
        mean = data[q].mean(axis=1)
        se = data[q].std(axis=1, ddof=1) / np.sqrt(n_seeds)
        a, b, p, p_se, chi2 = fit_decay(lengths, mean, se, 1)
        meta = {"qubit": q, "simultaneous": True, "n_seeds": n_seeds, "shots": shots, "seed": src.seed,
                "crosstalk_zz": noise.crosstalk_zz}
        out.append(RBResult(1, lengths, mean, se, a, b, p, p_se, chi2, meta))
    return tuple(out)


# --------------------------------------------------------------------------
# Residue calibration
# --------------------------------------------------------------------------


def average_clifford_error(group: CliffordGroup, params: DeviceParams, noise: NoiseModel,
                           device_qubits: tuple[int, ...]) -> float:
    """1 - mean average gate fidelity of the compiled noisy Cliffords.

    This is the first-order prediction of the RB error per Clifford.
    """
    channels = _CliffordChannels(group, params, noise, device_qubits, None)
    f = [average_gate_fidelity(QuantumChannel.from_unitary(group.unitaries[i]), QuantumChannel(channels(i)))
         for i in range(len(group))]
    return float(1 - np.mean(f))


def calibrate_single_qubit_residue(q: int, target_r: float, params: DeviceParams,
                                   noise: NoiseModel | None = None) -> float:
    """Per-pulse residue on qubit ``q`` that makes its Clifford error equal ``target_r``."""
    noise = noise or NoiseModel(readout_confusion=False)
    group = build_clifford_group(1)

    def f(lam):
        return average_clifford_error(group, params.with_single_qubit_residue(q, lam), noise, (q,)) - target_r

    if f(0.0) > 0:
        raise ValueError("decoherence alone exceeds the target error")
    return float(brentq(f, 0.0, 0.1, xtol=1e-9))


def calibrate_two_qubit_residue(pair: tuple[int, int], target_r: float, params: DeviceParams,
                                noise: NoiseModel | None = None) -> float:
    """ZX90 residue on ``pair`` (control, target) matching the two-qubit Clifford error."""
    noise = noise or NoiseModel(readout_confusion=False)
    group = build_clifford_group(2)

    def f(lam):
        layer_channel.cache_clear()
        return average_clifford_error(group, params.with_two_qubit_residue(*pair, lam), noise, pair) - target_r

    if f(0.0) > 0:
        raise ValueError("decoherence alone exceeds the target error")
    return float(brentq(f, 0.0, 0.5, xtol=1e-7))


def calibrate_device(params: DeviceParams, targets_1q: Sequence[float] = TARGET_R_1Q,
                     targets_2q: dict | None = None) -> DeviceParams:
    """Device with single- and two-qubit residues matched to the given RB errors."""
    targets_2q = targets_2q or TARGET_R_2Q
    for q, r in enumerate(targets_1q):
        params = params.with_single_qubit_residue(q, calibrate_single_qubit_residue(q, r, params))
    for pair, r in targets_2q.items():
        params = params.with_two_qubit_residue(*pair, calibrate_two_qubit_residue(pair, r, params))
    return params


def write_rb_json(result: RBResult | Sequence[RBResult], path: str | Path) -> None:
    data = result.to_dict() if isinstance(result, RBResult) else [r.to_dict() for r in result]
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True))
