"""Quantum channels with lossless conversion between Kraus, superoperator,
Choi and Pauli-transfer-matrix forms.

Conventions
-----------
* Superoperators act on row-stacked vectors: ``vec(rho)[i*d + j] = rho[i, j]``,
  so a Kraus operator ``K`` contributes ``kron(K, K.conj())``.
* Choi matrix: ``C = sum_ij |i><j| (x) E(|i><j|)`` (input factor first); it has
  trace ``d`` for trace-preserving maps.
* PTM: ``R[i, j] = tr(P_i E(P_j)) / d`` with Paulis ordered as in
  :func:`plaqsim.quantum.pauli_basis`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .quantum import (
    DimensionError,
    PAULI_1Q,
    _as_array,
    embed_operator,
    num_qubits,
    pauli_basis,
)

CP_TOL = 1e-8


class NotCompletelyPositiveError(ValueError):
    pass


def _superop_to_choi(s: np.ndarray, d: int) -> np.ndarray:
    return s.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)


def _choi_to_superop(c: np.ndarray, d: int) -> np.ndarray:
    return c.reshape(d, d, d, d).transpose(1, 3, 0, 2).reshape(d * d, d * d)


def _pauli_vec_matrix(n: int) -> np.ndarray:
    # columns are vec(P_j)
    return pauli_basis(n).reshape(4**n, -1).T


class QuantumChannel:
    """A completely positive map on n qubits.

    Stored internally as a superoperator; the other representations are
    computed on demand. Instances are treated as immutable.
    """

    __slots__ = ("_s", "dim", "n")

    def __init__(self, superop: np.ndarray):
        s = np.array(superop, dtype=complex)
        d2 = s.shape[0]
        d = int(round(np.sqrt(d2)))
        if s.shape != (d2, d2) or d * d != d2:
            raise DimensionError("superoperator must be d^2 x d^2")
        s.setflags(write=False)
        self._s = s
        self.dim = d
        self.n = num_qubits(d)

    # -- constructors ----------------------------------------------------
    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray]) -> "QuantumChannel":
        ks = [np.asarray(k, dtype=complex) for k in kraus]
        s = sum(np.kron(k, k.conj()) for k in ks)
        return cls(s)

    @classmethod
    def from_unitary(cls, u: np.ndarray) -> "QuantumChannel":
        return cls.from_kraus([u])

    @classmethod
    def from_choi(cls, choi: np.ndarray) -> "QuantumChannel":
        c = np.asarray(choi, dtype=complex)
        d = int(round(np.sqrt(c.shape[0])))
        return cls(_choi_to_superop(c, d))

    @classmethod
    def from_ptm(cls, ptm: np.ndarray) -> "QuantumChannel":
        r = np.asarray(ptm, dtype=float)
        n = num_qubits(int(round(np.sqrt(r.shape[0]))))
        v = _pauli_vec_matrix(n)
        return cls(v @ r @ v.conj().T / 2**n)

    @classmethod
    def identity(cls, n: int) -> "QuantumChannel":
        return cls(np.eye(4**n, dtype=complex))

    @classmethod
    def projection(cls, proj: np.ndarray) -> "QuantumChannel":
        """rho -> P rho P (trace non-increasing)."""
        return cls.from_kraus([proj])

    @classmethod
    def depolarizing(cls, n: int, strength: float) -> "QuantumChannel":
        """rho -> (1 - strength) rho + strength tr(rho) I / 2^n."""
        if not 0.0 <= strength <= 1.0 + 1.0 / (4**n - 1):
            raise ValueError("depolarizing strength out of range")
        diag = np.full(4**n, 1.0 - strength)
        diag[0] = 1.0
        return cls.from_ptm(np.diag(diag))

    # -- representations -------------------------------------------------
    @property
    def superop(self) -> np.ndarray:
        return self._s

    @property
    def choi(self) -> np.ndarray:
        return _superop_to_choi(self._s, self.dim)

    @property
    def ptm(self) -> np.ndarray:
        v = _pauli_vec_matrix(self.n)
        r = v.conj().T @ self._s @ v / self.dim
        if np.abs(r.imag).max() > 1e-9:
            raise ValueError("PTM has an imaginary part; map is not Hermiticity preserving")
        return r.real

    @property
    def kraus(self) -> list[np.ndarray]:
        c = self.choi
        c = 0.5 * (c + c.conj().T)
        w, v = np.linalg.eigh(c)
        if w.min() < -CP_TOL:
            raise NotCompletelyPositiveError(f"Choi matrix has eigenvalue {w.min():.3e}")
        d = self.dim
        out = []
        for lam, vec in zip(w[::-1], v.T[::-1]):
            if lam <= 1e-14:
                continue
            out.append(np.sqrt(lam) * vec.reshape(d, d).T)
        return out

    # -- properties ------------------------------------------------------
    def choi_min_eigenvalue(self) -> float:
        c = self.choi
        return float(np.linalg.eigvalsh(0.5 * (c + c.conj().T)).min())

    def is_cp(self, tol: float = 1e-10) -> bool:
        return self.choi_min_eigenvalue() >= -tol

    def completeness(self) -> np.ndarray:
        """sum_k K^dagger K, computed from the Choi matrix without a Kraus split."""
        d = self.dim
        c = self.choi.reshape(d, d, d, d)
        return np.einsum("iaja->ij", c).T

    def is_trace_preserving(self, tol: float = 1e-10) -> bool:
        return bool(np.abs(self.completeness() - np.eye(self.dim)).max() <= tol)

    def is_trace_non_increasing(self, tol: float = 1e-10) -> bool:
        w = np.linalg.eigvalsh(np.eye(self.dim) - self.completeness())
        return bool(w.min() >= -tol)

    # -- algebra ---------------------------------------------------------
    def apply(self, rho) -> np.ndarray:
        m = _as_array(rho)
        if m.shape[-1] != self.dim:
            raise DimensionError(f"channel on {self.n} qubits applied to dimension {m.shape[-1]}")
        flat = m.reshape(m.shape[:-2] + (-1,))
        out = flat @ self._s.T
        return out.reshape(m.shape)

    def __call__(self, rho) -> np.ndarray:
        return self.apply(rho)

    def __matmul__(self, other: "QuantumChannel") -> "QuantumChannel":
        """(self @ other)(rho) == self(other(rho))."""
        if self.dim != other.dim:
            raise DimensionError("cannot compose channels of different size")
        return QuantumChannel(self._s @ other._s)

    def __add__(self, other: "QuantumChannel") -> "QuantumChannel":
        if self.dim != other.dim:
            raise DimensionError("cannot add channels of different size")
        return QuantumChannel(self._s + other._s)

    def __mul__(self, scale: float) -> "QuantumChannel":
        return QuantumChannel(self._s * scale)

    __rmul__ = __mul__

    def tensor(self, other: "QuantumChannel") -> "QuantumChannel":
        """Channel on [self-qubits, other-qubits]."""
        n = self.n + other.n
        a = self.embed(range(self.n), n)
        b = other.embed(range(self.n, n), n)
        return a @ b

    def embed(self, targets: Sequence[int], n: int) -> "QuantumChannel":
        """Lift onto ``targets`` of an n-qubit register (identity elsewhere)."""
        targets = list(targets)
        if len(targets) != self.n:
            raise DimensionError("target count does not match channel size")
        if n == self.n and targets == list(range(n)):
            return self
        # the superoperator is an operator on 2n "row/column" qubits
        full = embed_operator(self._s, targets + [n + t for t in targets], 2 * n)
        return QuantumChannel(full)

    def allclose(self, other: "QuantumChannel", atol: float = 1e-10) -> bool:
        return self.dim == other.dim and bool(np.abs(self._s - other._s).max() <= atol)

    def __repr__(self) -> str:
        return f"QuantumChannel(n={self.n})"


def apply_channel(ch: QuantumChannel, rho) -> np.ndarray:
    return ch.apply(rho)


def compose(*channels: QuantumChannel) -> QuantumChannel:
    """Sequential composition; the first argument is applied first."""
    out = channels[0]
    for ch in channels[1:]:
        out = ch @ out
    return out


def to_representation(ch: QuantumChannel, rep: str):
    """Return ``ch`` as ``"kraus"``, ``"ptm"``, ``"choi"`` or ``"superop"``."""
    try:
        return {"kraus": lambda: ch.kraus, "ptm": lambda: ch.ptm, "choi": lambda: ch.choi,
                "superop": lambda: ch.superop}[rep]()
    except KeyError:
        raise ValueError(f"unknown representation {rep!r}") from None


def pauli_channel_1q(px: float, py: float, pz: float) -> QuantumChannel:
    p0 = 1.0 - px - py - pz
    return QuantumChannel.from_kraus(
        [np.sqrt(p) * PAULI_1Q[c] for p, c in ((p0, "I"), (px, "X"), (py, "Y"), (pz, "Z")) if p > 0]
    )


def average_gate_fidelity(ideal: QuantumChannel, noisy: QuantumChannel) -> float:
    """(tr(R_ideal^-1 R_noisy)/d + 1)/(d + 1) for unitary ``ideal``."""
    d = ideal.dim
    r_ideal = ideal.ptm
    # PTMs of unitaries are orthogonal, so the inverse is the transpose
    f_pro = np.trace(r_ideal.T @ noisy.ptm) / d**2
    return float((d * f_pro + 1) / (d + 1))
