"""State tomography from correlated single-shot readout.

Each setting appends single-qubit post-rotations, measures every tomographed
qubit in Z and records outcome counts. Readout confusion is undone per qubit
with the tensored inverse assignment matrix; the Pauli vector follows from a
least-squares fit of the rotated Z-string correlators.
"""
from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuits import Circuit, _jsonable, run
from .device import _FIXED_1Q, DeviceParams, GateSpec, NoiseModel, layer_channel, sequence_unitary
from .quantum import (
    RandomStateSource,
    _as_array,
    from_pauli_vector,
    num_qubits,
    partial_trace,
    pauli_basis,
    pauli_expectations,
    state_fidelity,
)
from .readout import ReadoutChannelModel

POST_ROTATIONS = ("I", "X", "X90", "X-90", "Y90", "Y-90")


class MissingCalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class TomographyDesign:
    """Full 6^k product design over ``qubits`` (register indices)."""

    qubits: tuple[int, ...]
    shots_per_setting: int = 20000
    rotations: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if not self.rotations:
            rots = tuple(itertools.product(POST_ROTATIONS, repeat=len(self.qubits)))
            object.__setattr__(self, "rotations", rots)
        if any(len(r) != self.n for r in self.rotations):
            raise ValueError("every setting must list one rotation per tomographed qubit")
        if self.shots_per_setting < 1:
            raise ValueError("shots_per_setting must be positive")

    @classmethod
    def full(cls, n: int, shots_per_setting: int = 20000) -> "TomographyDesign":
        return cls(tuple(range(n)), shots_per_setting)

    @property
    def n(self) -> int:
        return len(self.qubits)

    @property
    def n_settings(self) -> int:
        return len(self.rotations)

    def is_complete(self) -> bool:
        return set(self.rotations) == set(itertools.product(POST_ROTATIONS, repeat=self.n))

    def to_dict(self) -> dict:
        return {"qubits": list(self.qubits), "shots_per_setting": self.shots_per_setting,
                "rotations": [list(r) for r in self.rotations]}


def rotation_layer(names: Sequence[str], qubits: Sequence[int]) -> tuple[GateSpec, ...]:
    return tuple(GateSpec(name, (q,)) for name, q in zip(names, qubits) if name != "I")


# --------------------------------------------------------------------------
# Correlator algebra
# --------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def sign_matrix(k: int) -> np.ndarray:
    """S[x, m] = (-1)^popcount(x & m): value of the Z-string ``m`` on outcome ``x``."""
    x = np.arange(2**k)
    pop = np.vectorize(lambda v: bin(v).count("1"))(x[:, None] & x[None, :])
    return (1 - 2 * (pop % 2)).astype(float)


def inverse_confusion(models: Sequence[ReadoutChannelModel] | None, k: int) -> np.ndarray:
    """Inverse of the tensored row-stochastic assignment matrix (identity when ``models`` is None)."""
    if models is None:
        return np.eye(2**k)
    out = np.ones((1, 1))
    for m in models:
        out = np.kron(out, np.linalg.inv(m.assignment_matrix()))
    return out


def confusion(models: Sequence[ReadoutChannelModel] | None, k: int) -> np.ndarray:
    if models is None:
        return np.eye(2**k)
    out = np.ones((1, 1))
    for m in models:
        out = np.kron(out, m.assignment_matrix())
    return out


def correlators_from_counts(counts: np.ndarray, minv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Confusion-corrected Z-string correlators and their standard errors.

    ``counts`` has shape (..., 2^k). Every shot with reported outcome ``y``
    contributes the weight ``(M^-1 S)[y, m]``; the mean weight is the corrected
    correlator and its sample spread gives the standard error.
    """
    counts = np.asarray(counts, dtype=float)
    k = num_qubits(counts.shape[-1])
    w = minv @ sign_matrix(k)  # (outcome, subset)
    shots = counts.sum(axis=-1, keepdims=True)
    freq = counts / shots
    mean = freq @ w
    second = freq @ (w**2)
    var = np.clip(second - mean**2, 0.0, None)
    stderr = np.sqrt(var / np.maximum(shots - 1, 1))
    return mean, stderr


@functools.lru_cache(maxsize=32)
def _rotated_z_coefficients(rotations: tuple[tuple[str, ...], ...]) -> np.ndarray:
    """A[s, m, j] = tr(U_s^dag Z_m U_s P_j) / d for every setting s and Z-subset m."""
    k = len(rotations[0])
    p1 = pauli_basis(1)
    z = p1[3]
    per = {}
    for name in POST_ROTATIONS:
        u = _FIXED_1Q[name]
        obs = u.conj().T @ z @ u
        per[name] = np.real(np.einsum("jab,ba->j", p1, obs)) / 2
    ident = np.array([1.0, 0.0, 0.0, 0.0])
    out = np.empty((len(rotations), 2**k, 4**k))
    for s, rot in enumerate(rotations):
        for m in range(2**k):
            vec = np.ones(1)
            for i, name in enumerate(rot):
                on = (m >> (k - 1 - i)) & 1
                vec = np.kron(vec, per[name] if on else ident)
            out[s, m] = vec
    return out


@functools.lru_cache(maxsize=32)
def _inversion_matrix(rotations: tuple[tuple[str, ...], ...]) -> np.ndarray:
    a = _rotated_z_coefficients(rotations)[:, 1:, 1:]
    a = a.reshape(-1, a.shape[-1])
    if np.linalg.matrix_rank(a) < a.shape[1]:
        raise np.linalg.LinAlgError("tomography design is not informationally complete")
    return np.linalg.pinv(a)


def pauli_vector_from_correlators(correlators: np.ndarray, rotations) -> np.ndarray:
    """Least-squares Pauli vector (with <I...I> fixed to 1) from (settings, 2^k) correlators."""
    pinv = _inversion_matrix(tuple(tuple(r) for r in rotations))
    c = np.asarray(correlators)
    flat = c[..., :, 1:].reshape(c.shape[:-2] + (-1,))
    body = flat @ pinv.T
    one = np.ones(body.shape[:-1] + (1,))
    return np.concatenate([one, body], axis=-1)


# --------------------------------------------------------------------------
# Records and experiment
# --------------------------------------------------------------------------


@dataclass
class CorrelatorRecord:
    design: TomographyDesign
    correlators: np.ndarray  # (settings, 2^k)
    stderr: np.ndarray  # (settings, 2^k)
    counts: np.ndarray | None  # (settings, 2^k) reported outcome counts; None on the exact path
    inv_confusion: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        return self.counts is None

    def to_dict(self) -> dict:
        return {"design": self.design.to_dict(), "correlators": self.correlators.tolist(),
                "stderr": self.stderr.tolist(), "exact": self.exact}


def _readout_models(qubits, readout, params: DeviceParams, noise: NoiseModel):
    if not noise.readout_confusion:
        return None
    models = readout if readout is not None else params.readout
    if not models:
        raise MissingCalibrationError("readout confusion is enabled but no readout calibration is available")
    if len(models) < max(qubits) + 1:
        raise MissingCalibrationError("readout calibration does not cover every measured qubit")
    return [models[q] for q in qubits]


def marginal_probabilities(rho: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Computational-basis distribution of ``qubits`` in the listed order."""
    m = _as_array(rho)
    n = num_qubits(m.shape[0])
    p = np.clip(np.real(np.diag(m)), 0, None).reshape([2] * n)
    drop = tuple(q for q in range(n) if q not in qubits)
    p = p.sum(axis=drop) if drop else p
    kept = sorted(qubits)
    p = np.transpose(p, [kept.index(q) for q in qubits])
    p = p.reshape(-1)
    return p / p.sum()


def run_tomography(state_prep: Circuit, design: TomographyDesign, params: DeviceParams, noise: NoiseModel,
                   readout: Sequence[ReadoutChannelModel] | None = None, src: RandomStateSource | None = None,
                   exact: bool = False, ideal_rotations: bool = False, initial=None) -> CorrelatorRecord:
    """Simulate every post-rotation setting and estimate the corrected correlators.

    ``exact=True`` skips shot sampling and returns infinite-shot correlators.
    """
    if max(design.qubits) >= state_prep.n:
        raise ValueError("design addresses qubits outside the circuit")
    if not exact and src is None:
        raise ValueError("a RandomStateSource is required for sampled tomography")
    models = _readout_models(design.qubits, readout, params, noise)
    k = design.n
    minv = inverse_confusion(models, k)
    conf = confusion(models, k)
    rho = run(state_prep, params, noise, initial).final_state.matrix
    rot_noise = NoiseModel.noiseless() if ideal_rotations else noise
    reported = np.empty((design.n_settings, 2**k))
    for s, rot in enumerate(design.rotations):
        layer = rotation_layer(rot, design.qubits)
        out = layer_channel(layer, state_prep.n, params, rot_noise, state_prep.device_qubits).apply(rho) if layer else rho
        reported[s] = marginal_probabilities(out, design.qubits) @ conf
    meta = {"experiment": state_prep.meta.get("experiment", ""), "exact": exact}
    if exact:
        corr = reported @ (minv @ sign_matrix(k))
        return CorrelatorRecord(design, corr, np.zeros_like(corr), None, minv, meta)
    counts = np.empty_like(reported, dtype=np.int64)
    for s in range(design.n_settings):
        g = src.split(s).generator
        counts[s] = g.multinomial(design.shots_per_setting, reported[s] / reported[s].sum())
    corr, se = correlators_from_counts(counts, minv)
    meta["seed"] = src.seed
    return CorrelatorRecord(design, corr, se, counts, minv, meta)


def exact_correlators(rho, design: TomographyDesign) -> np.ndarray:
    """Noise-free correlators of ``rho`` under ideal post-rotations (oracle path)."""
    rho = _as_array(rho)
    n = num_qubits(rho.shape[0])
    out = np.empty((design.n_settings, 2**design.n))
    for s, rot in enumerate(design.rotations):
        u = sequence_unitary(rotation_layer(rot, design.qubits), n)
        out[s] = marginal_probabilities(u @ rho @ u.conj().T, design.qubits) @ sign_matrix(design.n)
    return out


# --------------------------------------------------------------------------
# Reconstruction
# --------------------------------------------------------------------------


def linear_inversion(rec: CorrelatorRecord | np.ndarray, design: TomographyDesign | None = None) -> np.ndarray:
    """Raw (Hermitian, unit-trace, possibly non-PSD) density matrix."""
    if isinstance(rec, CorrelatorRecord):
        corr, design = rec.correlators, rec.design
    else:
        corr = np.asarray(rec)
    if design is None:
        raise ValueError("design required with bare correlators")
    if not design.is_complete():
        raise np.linalg.LinAlgError("linear inversion needs the complete 6^n design")
    return from_pauli_vector(pauli_vector_from_correlators(corr, design.rotations))


def project_to_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(u) + 1)
    rho_i = np.nonzero(u - css / idx > 0)[0][-1]
    shift = css[rho_i] / (rho_i + 1.0)
    return np.clip(w - shift, 0.0, None)


def project_to_physical(rho_raw: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD unit-trace matrix: eigenvalues projected onto the simplex."""
    m = _as_array(rho_raw)
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    if w.min() >= 0 and abs(w.sum() - 1) < 1e-13:
        return m
    p = project_to_simplex(w)
    return (v * p) @ v.conj().T


def physical_reconstruction(rec: CorrelatorRecord) -> np.ndarray:
    return project_to_physical(linear_inversion(rec))


def negative_eigenvalue_sum(rho_raw: np.ndarray) -> float:
    w = np.linalg.eigvalsh(_as_array(rho_raw))
    return float(-w[w < 0].sum())


def bootstrap_fidelity(rec: CorrelatorRecord, target, resamples: int = 200,
                       src: RandomStateSource | None = None, physical: bool = True) -> tuple[float, float]:
    """Mean and standard deviation of the fidelity over shot resamples.

    Resampling shots with replacement within a setting is the same as drawing
    multinomial counts from that setting's empirical frequencies.
    """
    if resamples < 10:
        raise ValueError("at least 10 bootstrap resamples are required")
    target = _as_array(target)

    def fid(corr):
        raw = linear_inversion(corr, rec.design)
        return state_fidelity(target, project_to_physical(raw) if physical else raw)

    if rec.exact:
        return fid(rec.correlators), 0.0
    if src is None:
        raise ValueError("a RandomStateSource is required for bootstrapping")
    g = src.generator
    shots = rec.counts.sum(axis=1)
    freq = rec.counts / shots[:, None]
    vals = np.empty(resamples)
    for b in range(resamples):
        counts = np.stack([g.multinomial(n, p) for n, p in zip(shots, freq)])
        corr, _ = correlators_from_counts(counts, rec.inv_confusion)
        vals[b] = fid(corr)
    return float(vals.mean()), float(vals.std(ddof=1))


@dataclass
class ReconstructionResult:
    rho_raw: np.ndarray
    rho_physical: np.ndarray
    negative_eigenvalue_sum: float
    fidelity_raw: float
    fidelity_physical: float
    stderr_bootstrap: float
    record: CorrelatorRecord

    def to_dict(self) -> dict:
        return _jsonable({
            "design": self.record.design.to_dict(),
            "correlators": self.record.correlators,
            "correlator_stderr": self.record.stderr,
            "pauli_vector_raw": pauli_expectations(self.rho_raw),
            "pauli_vector_physical": pauli_expectations(self.rho_physical),
            "fidelity_raw": self.fidelity_raw,
            "fidelity_sdp_like": self.fidelity_physical,
            "stderr_bootstrap": self.stderr_bootstrap,
            "negative_eigenvalue_sum": self.negative_eigenvalue_sum,
        })

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def reconstruct(rec: CorrelatorRecord, target, resamples: int = 200,
                src: RandomStateSource | None = None) -> ReconstructionResult:
    """Raw and physical estimates, fidelities to ``target`` and the bootstrap error."""
    target = _as_array(target)
    raw = linear_inversion(rec)
    phys = project_to_physical(raw)
    if rec.exact or resamples == 0:
        se = 0.0
    else:
        _, se = bootstrap_fidelity(rec, target, resamples, src)
    return ReconstructionResult(raw, phys, negative_eigenvalue_sum(raw), state_fidelity(target, raw),
                                state_fidelity(target, phys), se, rec)


def target_density(circuit: Circuit, qubits: Sequence[int]) -> np.ndarray:
    """Reduced target state of a preparation circuit on ``qubits``."""
    from .circuits import target_state
    from .quantum import projector

    full = projector(target_state(circuit))
    qubits = list(qubits)
    if sorted(qubits) != qubits:
        raise ValueError("tomographed qubits must be listed in ascending order")
    return partial_trace(full, qubits) if len(qubits) < circuit.n else full
