"""Measurement tomography of the parity check.

The conditional maps E_even, E_odd take the two code qubits to their
(sub-normalized) post-measurement state given the reported syndrome bit.
They are reconstructed from a full set of input preparations and
post-rotations, then compared to the ideal projections with a Monte Carlo
measurement fidelity and a Choi-based process fidelity.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .channels import QuantumChannel
from .circuits import CODE_QUBITS, EVEN_PARITY_BIT, SYNDROME, Circuit, _jsonable
from .device import DeviceParams, NoiseModel, idle_channel, layer_channel, sequence_unitary
from .quantum import (
    RandomStateSource,
    embed_operator,
    ket,
    pauli_basis,
    random_state_vectors,
    root_fidelity,
)
from .readout import ReadoutChannelModel
from .tomography import (
    MissingCalibrationError,
    TomographyDesign,
    _rotated_z_coefficients,
    inverse_confusion,
    sign_matrix,
)

MIN_BIN_COUNTS = 100
DISCARD_THRESHOLD = 1e-12
MAX_DISCARD_FRACTION = 1e-3

PI_EVEN = np.diag([1.0, 0.0, 0.0, 1.0]).astype(complex)
PI_ODD = np.diag([0.0, 1.0, 1.0, 0.0]).astype(complex)


class MeasurementFidelityError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Ideal maps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IdealParityMaps:
    """rho -> Pi rho Pi for the two parity projectors of the code qubits."""

    even_bit: int = EVEN_PARITY_BIT

    @property
    def pi_even(self) -> np.ndarray:
        return PI_EVEN

    @property
    def pi_odd(self) -> np.ndarray:
        return PI_ODD

    @property
    def e_even(self) -> QuantumChannel:
        return QuantumChannel.projection(PI_EVEN)

    @property
    def e_odd(self) -> QuantumChannel:
        return QuantumChannel.projection(PI_ODD)

    def branch(self, parity: str) -> QuantumChannel:
        return {"even": self.e_even, "odd": self.e_odd}[parity]

    @property
    def unconditional(self) -> QuantumChannel:
        return self.e_even + self.e_odd


def ideal_parity_operation(rho, even_bit: int = EVEN_PARITY_BIT) -> np.ndarray:
    """Pi_even rho Pi_even (x) |e><e| + Pi_odd rho Pi_odd (x) |o><o|.

    The output is ordered (code qubits, syndrome label); ``e`` is the bit
    reported for even parity and ``o = 1 - e``.
    """
    rho = np.asarray(getattr(rho, "matrix", rho), dtype=complex)
    lab = {b: np.outer(ket(str(b)), ket(str(b))) for b in (0, 1)}
    return (np.kron(PI_EVEN @ rho @ PI_EVEN, lab[even_bit])
            + np.kron(PI_ODD @ rho @ PI_ODD, lab[1 - even_bit]))


@dataclass
class ConditionalMeasurementMaps:
    e_even: QuantumChannel
    e_odd: QuantumChannel
    even_bit: int = EVEN_PARITY_BIT
    metadata: dict = field(default_factory=dict)

    def branch(self, parity: str) -> QuantumChannel:
        return {"even": self.e_even, "odd": self.e_odd}[parity]

    def by_bit(self, bit: int) -> QuantumChannel:
        return self.e_even if bit == self.even_bit else self.e_odd

    @property
    def unconditional(self) -> QuantumChannel:
        return self.e_even + self.e_odd

    def is_valid(self, tol: float = 1e-10) -> bool:
        return (self.e_even.is_cp(tol) and self.e_odd.is_cp(tol)
                and self.unconditional.is_trace_preserving(max(tol, 1e-10)))


# --------------------------------------------------------------------------
# Experiment
# --------------------------------------------------------------------------


def _prep_state(names: Sequence[str]) -> np.ndarray:
    u = sequence_unitary([_gs(n, q) for n, q in zip(names, range(2)) if n != "I"], 2)
    psi = u @ ket("00")
    return np.outer(psi, psi.conj())


def _gs(name, q):
    from .device import GateSpec

    return GateSpec(name, (q,))


@functools.lru_cache(maxsize=4)
def _input_pauli_matrix(preps: tuple[tuple[str, ...], ...]) -> np.ndarray:
    """Columns are the Pauli vectors tr(P_j rho_p) of the ideal input states."""
    basis = pauli_basis(2)
    cols = [np.real(np.einsum("jab,ba->j", basis, _prep_state(p))) for p in preps]
    x = np.array(cols).T
    if np.linalg.matrix_rank(x) < 16:
        raise np.linalg.LinAlgError("input states do not span the operator space")
    return np.linalg.pinv(x)


@functools.lru_cache(maxsize=4)
def _output_inversion(rotations: tuple[tuple[str, ...], ...]) -> np.ndarray:
    """Least-squares map from (settings x subsets) correlators to the full
    unnormalized Pauli vector, identity component included."""
    a = _rotated_z_coefficients(rotations).reshape(-1, 16)
    return np.linalg.pinv(a)


def _code_models(readout, params: DeviceParams, noise: NoiseModel):
    if not noise.readout_confusion:
        return None
    models = readout if readout is not None else params.readout
    if not models or len(models) < 3:
        raise MissingCalibrationError("readout calibration for all three qubits is required")
    return models


def project_maps(ptm_even: np.ndarray, ptm_odd: np.ndarray) -> tuple[QuantumChannel, QuantumChannel, dict]:
    """Make a pair of raw branch PTMs a valid measurement.

    Each branch Choi matrix is clamped to PSD; the sum's completeness
    operator T is then absorbed as rho -> T^-1/2 rho T^-1/2 on the input,
    which keeps both branches CP and makes their sum trace preserving.
    """
    info = {}
    clamped = []
    for name, r in (("even", ptm_even), ("odd", ptm_odd)):
        c = QuantumChannel.from_ptm(r).choi
        c = 0.5 * (c + c.conj().T)
        w, v = np.linalg.eigh(c)
        info[f"choi_min_eigenvalue_{name}"] = float(w.min())
        clamped.append(QuantumChannel.from_choi((v * np.clip(w, 0, None)) @ v.conj().T))
    t = clamped[0].completeness() + clamped[1].completeness()
    t = 0.5 * (t + t.conj().T)
    w, v = np.linalg.eigh(t)
    if w.min() <= 0:
        raise np.linalg.LinAlgError("reconstructed maps annihilate an input state")
    a = (v / np.sqrt(w)) @ v.conj().T
    fix = QuantumChannel.from_kraus([a])
    return clamped[0] @ fix, clamped[1] @ fix, info


def measurement_tomography(pcp: Circuit, params: DeviceParams, noise: NoiseModel,
                           design: TomographyDesign | None = None,
                           readout: Sequence[ReadoutChannelModel] | None = None,
                           src: RandomStateSource | None = None, exact: bool = False,
                           ideal_rotations: bool = False, project: bool = True) -> ConditionalMeasurementMaps:
    """Reconstruct E_even and E_odd of a parity-check circuit.

    Preparations are the post-rotation set applied to |00> on the code qubits
    (syndrome in |0>); every preparation is combined with every post-rotation
    setting. Shots are binned by the reported syndrome bit, code-qubit readout
    confusion is inverted, and each branch PTM is fitted by linear inversion.
    The syndrome confusion is deliberately left in the maps.
    """
    design = design or TomographyDesign(CODE_QUBITS)
    if tuple(design.qubits) != CODE_QUBITS:
        raise ValueError("the design must address the code qubits")
    if not exact and src is None:
        raise ValueError("a RandomStateSource is required for sampled tomography")
    even_bit = int(pcp.meta.get("even_parity_bit", EVEN_PARITY_BIT))
    models = _code_models(readout, params, noise)
    n = pcp.n
    preps = design.rotations
    posts = design.rotations
    rot_noise = NoiseModel.noiseless() if ideal_rotations else noise
    dq = pcp.device_qubits

    # joint confusion over (syndrome, code1, code2) bits
    order = (SYNDROME,) + CODE_QUBITS
    if models is None:
        conf = np.eye(8)
    else:
        conf = np.ones((1, 1))
        for q in order:
            conf = np.kron(conf, models[q].assignment_matrix())
    minv_code = inverse_confusion(None if models is None else [models[q] for q in CODE_QUBITS], 2)
    w_code = minv_code @ sign_matrix(2)

    body = pcp.channel(params, noise)
    if noise.code_readout_decoherence:
        body = idle_channel(params.code_readout_ns, CODE_QUBITS, n, params, noise, dq) @ body
    rho0 = np.zeros((2**n, 2**n), dtype=complex)
    rho0[0, 0] = 1.0
    post_channels = [layer_channel(_layer(p), n, params, rot_noise, dq) for p in posts]

    n_p, n_s = len(preps), len(posts)
    corr = np.empty((2, n_p, n_s, 4))
    var = np.zeros((2, n_p, n_s, 4))
    flagged = []
    shots = design.shots_per_setting
    for i, prep in enumerate(preps):
        rho = layer_channel(_layer(prep), n, params, rot_noise, dq).apply(rho0)
        rho = body.apply(rho)
        for s, post in enumerate(post_channels):
            out = post.apply(rho)
            p = np.clip(np.real(np.diag(out)), 0, None).reshape(2, 2, 2)
            p = np.transpose(p, order).reshape(-1)
            p = (p / p.sum()) @ conf
            if exact:
                freq = p.reshape(2, 4)
            else:
                g = src.split(i * n_s + s).generator
                counts = g.multinomial(shots, p / p.sum()).reshape(2, 4)
                if counts.sum(axis=1).min() < MIN_BIN_COUNTS:
                    flagged.append((i, s))
                freq = counts / shots
            # per-bit joint correlators tr(Z_m E_b(rho)), bit-major
            mean = freq @ w_code
            corr[:, i, s] = mean
            if not exact:
                # each shot contributes w[y, m] to its own bin and 0 to the other
                second = freq @ w_code**2
                var[:, i, s] = np.clip(second - mean**2, 0, None) / (shots - 1)

    out_inv = _output_inversion(tuple(posts))
    in_pinv = _input_pauli_matrix(tuple(preps))
    raw = {}
    for b in (0, 1):
        y = corr[b].reshape(n_p, -1) @ out_inv.T  # (preps, 16) output Pauli vectors
        raw[b] = y.T @ in_pinv  # R with Y = R X
    r_even, r_odd = raw[even_bit], raw[1 - even_bit]
    meta = {"exact": exact, "flagged_settings": flagged, "even_parity_bit": even_bit,
            "shots_per_setting": None if exact else shots, "ideal_rotations": ideal_rotations,
            "max_correlator_stderr": float(np.sqrt(var.max()))}
    if src is not None:
        meta["seed"] = src.seed
    if project:
        e_even, e_odd, info = project_maps(r_even, r_odd)
        meta.update(info)
    else:
        e_even, e_odd = QuantumChannel.from_ptm(r_even), QuantumChannel.from_ptm(r_odd)
    meta["raw_ptm_even"] = r_even
    meta["raw_ptm_odd"] = r_odd
    return ConditionalMeasurementMaps(e_even, e_odd, even_bit, meta)


def _layer(names: Sequence[str]):
    return tuple(_gs(name, q) for name, q in zip(names, CODE_QUBITS) if name != "I")


def composed_branches(pcp: Circuit, params: DeviceParams, noise: NoiseModel,
                      readout: Sequence[ReadoutChannelModel] | None = None) -> ConditionalMeasurementMaps:
    """Branches by direct channel composition: circuit, projective syndrome
    measurement and syndrome confusion. No preparation or rotation errors."""
    even_bit = int(pcp.meta.get("even_parity_bit", EVEN_PARITY_BIT))
    models = _code_models(readout, params, noise)
    m = np.eye(2) if models is None else models[SYNDROME].assignment_matrix()
    body = pcp.channel(params, noise)
    if noise.code_readout_decoherence:
        body = idle_channel(params.code_readout_ns, CODE_QUBITS, pcp.n, params, noise, pcp.device_qubits) @ body
    true = {}
    zero = np.array([[1.0, 0.0], [0.0, 0.0]])
    basis = pauli_basis(2)
    for b in (0, 1):
        proj = np.zeros((2, 2))
        proj[b, b] = 1
        ptm = np.empty((16, 16))
        for j in range(16):
            rin = _embed_code(basis[j], zero)
            out = body.apply(rin)
            out = embed_operator(proj, [SYNDROME], 3) @ out
            red = _code_block(out)
            ptm[:, j] = np.real(np.einsum("iab,ba->i", basis, red)) / 4
        true[b] = ptm
    rep = {r: sum(m[s, r] * true[s] for s in (0, 1)) for r in (0, 1)}
    return ConditionalMeasurementMaps(QuantumChannel.from_ptm(rep[even_bit]),
                                      QuantumChannel.from_ptm(rep[1 - even_bit]), even_bit,
                                      {"exact": True, "composed": True})


def _embed_code(code_op: np.ndarray, syn_op: np.ndarray) -> np.ndarray:
    """Operator on (Q1, Q2, Q3) from a code-qubit operator and a syndrome operator."""
    full = np.kron(code_op, syn_op)  # order (Q1, Q3, Q2)
    t = full.reshape([2] * 6).transpose(0, 2, 1, 3, 5, 4)
    return t.reshape(8, 8)


def _code_block(op: np.ndarray) -> np.ndarray:
    """Partial trace over the syndrome of a (Q1, Q2, Q3) operator."""
    return np.einsum("asbcsd->abcd", op.reshape([2] * 6)).reshape(4, 4)


# --------------------------------------------------------------------------
# Figures of merit
# --------------------------------------------------------------------------


def ptm_render(maps: ConditionalMeasurementMaps) -> dict[str, np.ndarray]:
    """16 x 16 PTMs of both branches and their sum."""
    return {"even": maps.e_even.ptm, "odd": maps.e_odd.ptm, "unconditional": maps.unconditional.ptm}


class MCEstimate(NamedTuple):
    value: float
    stderr: float
    n_samples: int
    n_discarded: int


def _trace_norm(m: np.ndarray) -> np.ndarray:
    return np.abs(np.linalg.eigvalsh(m)).sum(axis=-1)


def measurement_fidelity(noisy: QuantumChannel, ideal: QuantumChannel, n_samples: int = 150_000,
                         src: RandomStateSource | None = None, chunk: int = 25_000) -> MCEstimate:
    """Average of tr sqrt(sqrt(I') E' sqrt(I')) over Fubini-Study pure inputs.

    ``I'`` and ``E'`` are the ideal and noisy outputs normalized by their
    trace norms. Inputs where either output is (numerically) zero are
    discarded; more than 0.1% discards raises an error.
    """
    if noisy.dim != ideal.dim:
        raise ValueError("maps act on different dimensions")
    src = src or RandomStateSource(0)
    n = noisy.n
    vals = []
    discarded = 0
    done = 0
    k = 0
    while done < n_samples:
        size = min(chunk, n_samples - done)
        psi = random_state_vectors(src.split(k), n, size)
        rho = np.einsum("ka,kb->kab", psi, psi.conj())
        a = ideal.apply(rho)
        b = noisy.apply(rho)
        a = 0.5 * (a + a.conj().swapaxes(-1, -2))
        b = 0.5 * (b + b.conj().swapaxes(-1, -2))
        na, nb = _trace_norm(a), _trace_norm(b)
        ok = (na > DISCARD_THRESHOLD) & (nb > DISCARD_THRESHOLD)
        discarded += int((~ok).sum())
        a = a[ok] / na[ok, None, None]
        b = b[ok] / nb[ok, None, None]
        vals.append(root_fidelity(a, b))
        done += size
        k += 1
    if discarded > MAX_DISCARD_FRACTION * n_samples:
        raise MeasurementFidelityError(
            f"{discarded} of {n_samples} samples had a null output; the map is likely wrong")
    v = np.concatenate(vals)
    v = np.clip(v, 0.0, 1.0)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return MCEstimate(float(v.mean()), se, int(v.size), discarded)


def process_fidelity_choi(noisy: QuantumChannel, ideal: QuantumChannel) -> float:
    """(tr sqrt(sqrt(C_i) C_n sqrt(C_i)))^2 / (tr C_i tr C_n) for Choi matrices C."""
    ci, cn = ideal.choi, noisy.choi
    ti, tn = np.trace(ci).real, np.trace(cn).real
    if ti <= 1e-15 or tn <= 1e-15:
        raise ValueError("zero-trace Choi matrix")
    ci = 0.5 * (ci + ci.conj().T)
    cn = 0.5 * (cn + cn.conj().T)
    f = float(root_fidelity(ci, cn)) ** 2 / (ti * tn)
    return min(max(f, 0.0), 1.0)


def unconditional_map(maps: ConditionalMeasurementMaps, n_samples: int = 150_000,
                      src: RandomStateSource | None = None) -> tuple[QuantumChannel, MCEstimate]:
    """Sum of the branches and its measurement fidelity to the ideal parity dephasing."""
    unc = maps.unconditional
    return unc, measurement_fidelity(unc, IdealParityMaps(maps.even_bit).unconditional, n_samples, src)


@dataclass
class MeasurementFidelityResult:
    f_meas_even: MCEstimate
    f_meas_odd: MCEstimate
    f_meas_unconditional: MCEstimate
    f_pro_even: float
    f_pro_odd: float
    ptms: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def mc(e: MCEstimate) -> dict:
            return {"value": e.value, "stderr": e.stderr, "n_samples": e.n_samples, "n_discarded": e.n_discarded}

        return _jsonable({
            "ptm_even": self.ptms["even"],
            "ptm_odd": self.ptms["odd"],
            "ptm_unconditional": self.ptms["unconditional"],
            "f_meas_even": mc(self.f_meas_even),
            "f_meas_odd": mc(self.f_meas_odd),
            "f_meas_unconditional": mc(self.f_meas_unconditional),
            "f_pro_even": self.f_pro_even,
            "f_pro_odd": self.f_pro_odd,
            "metadata": {k: v for k, v in self.metadata.items() if not k.startswith("raw_ptm")},
        })

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def evaluate_maps(maps: ConditionalMeasurementMaps, n_samples: int = 150_000,
                  src: RandomStateSource | None = None) -> MeasurementFidelityResult:
    """All figures of merit of a reconstructed measurement."""
    src = src or RandomStateSource(0)
    ideal = IdealParityMaps(maps.even_bit)
    fe = measurement_fidelity(maps.e_even, ideal.e_even, n_samples, src.split(0))
    fo = measurement_fidelity(maps.e_odd, ideal.e_odd, n_samples, src.split(1))
    _, fu = unconditional_map(maps, n_samples, src.split(2))
    return MeasurementFidelityResult(
        fe, fo, fu,
        process_fidelity_choi(maps.e_even, ideal.e_even),
        process_fidelity_choi(maps.e_odd, ideal.e_odd),
        ptm_render(maps),
        dict(maps.metadata),
    )
