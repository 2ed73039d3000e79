"""Dense multi-qubit states, Pauli bookkeeping and fidelities.

Qubit ordering: qubit 0 (Q1 on the device) is the most significant bit of the
computational-basis index, i.e. ``|q0 q1 q2>`` maps to index ``4*q0 + 2*q1 + q2``.
Every module in the package follows this ordering.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 4

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_1Q = {"I": I2, "X": X, "Y": Y, "Z": Z}
_PAULI_CHARS = "IXYZ"


class DimensionError(ValueError):
    pass


def num_qubits(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if dim < 1 or 2**n != dim:
        raise DimensionError(f"dimension {dim} is not a power of 2")
    return n


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "matrix", x), dtype=complex)


# --------------------------------------------------------------------------
# States
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "n", num_qubits(amps.size))
        if abs(np.linalg.norm(amps) - 1.0) > 1e-12:
            raise ValueError("state vector is not normalized")

    def density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace 2^n x 2^n matrix.

    Positivity is not enforced on construction (raw tomographic estimates are
    allowed); use :meth:`is_physical` to check it.
    """

    matrix: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("density matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "n", num_qubits(m.shape[0]))
        if not np.allclose(m, m.conj().T, atol=1e-12, rtol=0):
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > 1e-12:
            raise ValueError(f"density matrix trace {np.trace(m).real} != 1")

    @classmethod
    def from_vector(cls, psi: Sequence[complex]) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def basis(cls, bits: str) -> "DensityMatrix":
        """Computational basis state from a bit string such as ``"010"``."""
        psi = np.zeros(2 ** len(bits), dtype=complex)
        psi[int(bits, 2)] = 1.0
        return cls(np.outer(psi, psi))

    @classmethod
    def maximally_mixed(cls, n: int) -> "DensityMatrix":
        return cls(np.eye(2**n, dtype=complex) / 2**n)

    def is_physical(self, tol: float = 1e-10) -> bool:
        return bool(np.linalg.eigvalsh(self.matrix).min() >= -tol)


def ket(bits: str) -> np.ndarray:
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return psi


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)
BELL_EVEN = (ket("00") + ket("11")) / np.sqrt(2)
BELL_ODD = (ket("01") + ket("10")) / np.sqrt(2)
GHZ3 = (ket("000") + ket("111")) / np.sqrt(2)


# --------------------------------------------------------------------------
# Basic linear algebra
# --------------------------------------------------------------------------


def tensor(*ops, max_qubits: int = MAX_QUBITS) -> np.ndarray:
    """Kronecker product; the first argument holds the most significant qubits."""
    arrays = [_as_array(op) for op in ops]
    for a in arrays:
        num_qubits(a.shape[0])
    out = functools.reduce(np.kron, arrays)
    if num_qubits(out.shape[0]) > max_qubits:
        raise DimensionError(f"result exceeds {max_qubits} qubits")
    return out


def embed_operator(op: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Lift a k-qubit operator acting on ``targets`` to the full n-qubit space."""
    op = np.asarray(op, dtype=complex)
    k = len(targets)
    if op.shape != (2**k, 2**k):
        raise DimensionError("operator size does not match target count")
    if len(set(targets)) != k or any(t < 0 or t >= n for t in targets):
        raise ValueError(f"invalid targets {targets} for {n} qubits")
    rest = [q for q in range(n) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest), dtype=complex))
    order = list(targets) + rest
    # axes of `full` are (order..., order...); permute back to 0..n-1
    perm = np.argsort(order)
    full = full.reshape([2] * (2 * n))
    full = full.transpose(list(perm) + [n + p for p in perm])
    return full.reshape(2**n, 2**n)


def partial_trace(rho, keep: Iterable[int]) -> np.ndarray:
    """Reduced state on the qubits in ``keep`` (returned in ascending qubit order)."""
    m = _as_array(rho)
    n = num_qubits(m.shape[0])
    keep = sorted(set(keep))
    if not keep:
        raise ValueError("keep set must be nonempty")
    if any(q < 0 or q >= n for q in keep):
        raise ValueError(f"qubit index out of range for {n} qubits")
    drop = [q for q in range(n) if q not in keep]
    t = m.reshape([2] * (2 * n))
    letters = "abcdefghijklmnop"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for q in drop:
        col[q] = row[q]
    out = "".join(row[q] for q in keep) + "".join(col[q] for q in keep)
    r = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = 2 ** len(keep)
    return r.reshape(d, d)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian matrix with eigenvalues clamped at zero."""
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)[..., None, :]) @ v.conj().swapaxes(-1, -2)


def _check_hermitian(m: np.ndarray, name: str) -> None:
    if not np.allclose(m, m.conj().swapaxes(-1, -2), atol=1e-10, rtol=0):
        raise ValueError(f"{name} is not Hermitian")


def root_fidelity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """tr sqrt(sqrt(a) b sqrt(a)); broadcasts over leading batch axes."""
    sa = psd_sqrt(a)
    inner = sa @ b @ sa
    inner = 0.5 * (inner + inner.conj().swapaxes(-1, -2))
    w = np.linalg.eigvalsh(inner)
    return np.sqrt(np.clip(w, 0.0, None)).sum(axis=-1)


def state_fidelity(rho_ideal, rho_noisy) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho_ideal) rho_noisy sqrt(rho_ideal)))**2.

    ``rho_noisy`` may be a raw (slightly non-PSD) estimate; for a pure
    ``rho_ideal`` the result then reduces to ``<psi|rho_noisy|psi>``.
    """
    a = _as_array(rho_ideal)
    b = _as_array(rho_noisy)
    if a.shape != b.shape:
        raise DimensionError("states have different dimensions")
    _check_hermitian(a, "rho_ideal")
    _check_hermitian(b, "rho_noisy")
    f = float(root_fidelity(a, b)) ** 2
    return min(max(f, 0.0), 1.0)


def trace_norm(m: np.ndarray) -> np.ndarray:
    h = 0.5 * (m + m.conj().swapaxes(-1, -2))
    return np.abs(np.linalg.eigvalsh(h)).sum(axis=-1)


def von_neumann_entropy(rho, base: float = 2.0) -> float:
    w = np.linalg.eigvalsh(_as_array(rho))
    w = w[w > 1e-15]
    return float(-(w * np.log(w)).sum() / np.log(base))


def global_phase_distance(u: np.ndarray, v: np.ndarray) -> float:
    """min over phi of ||u - e^{i phi} v||_F / sqrt(d)."""
    d = u.shape[0]
    overlap = np.trace(v.conj().T @ u)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.linalg.norm(u - phase * v) / np.sqrt(d))


# --------------------------------------------------------------------------
# Paulis
# --------------------------------------------------------------------------


def pauli_label(index: int, n: int) -> str:
    if not 0 <= index < 4**n:
        raise ValueError("Pauli index out of range")
    chars = []
    for _ in range(n):
        chars.append(_PAULI_CHARS[index % 4])
        index //= 4
    return "".join(reversed(chars))


def pauli_index(label: str) -> int:
    idx = 0
    for c in label:
        idx = 4 * idx + _PAULI_CHARS.index(c)
    return idx


def pauli_matrix(label: str) -> np.ndarray:
    return tensor(*(PAULI_1Q[c] for c in label), max_qubits=len(label))


@functools.lru_cache(maxsize=None)
def pauli_basis(n: int) -> np.ndarray:
    """All 4^n Pauli matrices, shape (4^n, 2^n, 2^n), in index order."""
    mats = [np.ones((1, 1), dtype=complex)]
    for _ in range(n):
        mats = [np.kron(m, p) for m in mats for p in (I2, X, Y, Z)]
    out = np.array(mats)
    out.setflags(write=False)
    return out


def pauli_labels(n: int) -> list[str]:
    return ["".join(t) for t in itertools.product(_PAULI_CHARS, repeat=n)]


def pauli_expectations(rho) -> np.ndarray:
    """Pauli vector: component j equals Re tr(P_j rho)."""
    m = _as_array(rho)
    n = num_qubits(m.shape[0])
    vals = np.einsum("kij,ji->k", pauli_basis(n), m)
    if np.abs(vals.imag).max() > 1e-10:
        raise ValueError("Pauli expectations have an imaginary part; input not Hermitian")
    return vals.real


def from_pauli_vector(vec: Sequence[float]) -> np.ndarray:
    """Inverse of :func:`pauli_expectations`: rho = sum_j v_j P_j / 2^n."""
    vec = np.asarray(vec, dtype=float)
    n = num_qubits(int(round(np.sqrt(vec.size))))
    return np.einsum("k,kij->ij", vec, pauli_basis(n)) / 2**n


# --------------------------------------------------------------------------
# Randomness
# --------------------------------------------------------------------------


class RandomStateSource:
    """Seeded, splittable randomness built on numpy's counter-based Philox.

    Children produced by :meth:`split` are derived from the seed and a spawn
    key only, so parallel batches reproduce regardless of scheduling.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed) & (2**64 - 1))
        self.generator = np.random.Generator(np.random.Philox(self._seq))

    @property
    def seed(self) -> int:
        return int(self._seq.entropy)

    @property
    def counter(self) -> int:
        return int(self.generator.bit_generator.state["state"]["counter"][0])

    def split(self, key: int) -> "RandomStateSource":
        child = np.random.SeedSequence(self._seq.entropy, spawn_key=self._seq.spawn_key + (int(key),))
        return RandomStateSource(child)

    def spawn(self, count: int) -> list["RandomStateSource"]:
        return [self.split(k) for k in range(count)]


def random_state_vectors(src: RandomStateSource, n: int, size: int) -> np.ndarray:
    """``size`` Fubini-Study distributed state vectors, shape (size, 2^n)."""
    d = 2**n
    g = src.generator.standard_normal((size, d, 2))
    psi = g[..., 0] + 1j * g[..., 1]
    return psi / np.linalg.norm(psi, axis=1, keepdims=True)


def random_pure_state(src: RandomStateSource, n: int) -> PureState:
    return PureState(random_state_vectors(src, n, 1)[0])


def random_density_matrix(src: RandomStateSource, n: int, rank: int | None = None) -> np.ndarray:
    """Random mixed state from a Ginibre ensemble (test helper)."""
    d = 2**n
    rank = d if rank is None else rank
    g = src.generator.standard_normal((d, rank)) + 1j * src.generator.standard_normal((d, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real
