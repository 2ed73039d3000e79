"""Single-shot readout: projective Z measurement followed by a classical
double-Gaussian voltage emission and threshold assignment."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .quantum import RandomStateSource, _as_array, num_qubits


class ReadoutFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReadoutChannelModel:
    """Voltage model of one measurement channel.

    Preparing state ``s`` emits from the state-``s`` Gaussian with probability
    ``1 - wrong_state_weight_s`` and from the other state's Gaussian otherwise.
    """

    mu0: float = -1.0
    mu1: float = 1.0
    sigma0: float = 0.5
    sigma1: float = 0.5
    wrong_state_weight_0: float = 0.0
    wrong_state_weight_1: float = 0.0
    threshold: float = 0.0
    polarity: bool = False

    def __post_init__(self):
        if self.mu0 == self.mu1:
            raise ValueError("mu0 and mu1 must differ")
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise ValueError("sigmas must be positive")
        for w in (self.wrong_state_weight_0, self.wrong_state_weight_1):
            if not 0.0 <= w < 0.5:
                raise ValueError("wrong-state weights must lie in [0, 0.5)")

    @classmethod
    def ideal(cls) -> "ReadoutChannelModel":
        return cls(sigma0=1e-3, sigma1=1e-3)

    @classmethod
    def calibrated(cls, assignment_fidelity: float, ratio0: float = 0.0, ratio1: float = 0.0,
                   mu0: float = -1.0, mu1: float = 1.0) -> "ReadoutChannelModel":
        """Equal-sigma model hitting ``assignment_fidelity`` at the midpoint threshold.

        ``ratio_s`` is the undesired-to-desired Gaussian weight ratio when
        preparing ``s``, as read off a double-Gaussian histogram fit.
        """
        w0, w1 = ratio0 / (1 + ratio0), ratio1 / (1 + ratio1)
        mid = 0.5 * (mu0 + mu1)

        def gap(sigma):
            m = cls(mu0, mu1, sigma, sigma, w0, w1, mid)
            return m.assignment_fidelity() - assignment_fidelity

        span = abs(mu1 - mu0)
        if gap(span * 1e-4) < 0:
            raise ValueError("wrong-state weights alone exceed the requested assignment error")
        sigma = brentq(gap, span * 1e-4, span * 50, xtol=1e-14)
        return cls(mu0, mu1, sigma, sigma, w0, w1, mid)

    def with_threshold(self, threshold: float) -> "ReadoutChannelModel":
        return ReadoutChannelModel(**{**asdict(self), "threshold": float(threshold)})

    # -- analytics -------------------------------------------------------
    def _p_above(self, s: int, t: float | None = None) -> float:
        t = self.threshold if t is None else t
        own = (self.mu0, self.sigma0) if s == 0 else (self.mu1, self.sigma1)
        other = (self.mu1, self.sigma1) if s == 0 else (self.mu0, self.sigma0)
        w = self.wrong_state_weight_0 if s == 0 else self.wrong_state_weight_1
        return (1 - w) * norm.sf(t, *own) + w * norm.sf(t, *other)

    def assignment_matrix(self, threshold: float | None = None) -> np.ndarray:
        """Row-stochastic M[s, r] = P(read r | state s)."""
        m = np.empty((2, 2))
        for s in (0, 1):
            p1 = self._p_above(s, threshold)
            if self.polarity:
                p1 = 1 - p1
            m[s] = (1 - p1, p1)
        return m

    def assignment_fidelity(self, threshold: float | None = None) -> float:
        m = self.assignment_matrix(threshold)
        return float(1 - m[1, 0] / 2 - m[0, 1] / 2)

    # -- sampling --------------------------------------------------------
    def sample_voltages(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        w = np.where(states == 0, self.wrong_state_weight_0, self.wrong_state_weight_1)
        emitted = np.where(rng.random(states.shape) < w, 1 - states, states)
        mu = np.where(emitted == 0, self.mu0, self.mu1)
        sigma = np.where(emitted == 0, self.sigma0, self.sigma1)
        return mu + sigma * rng.standard_normal(states.shape)

    def assign(self, voltages: np.ndarray) -> np.ndarray:
        bits = (np.asarray(voltages) >= self.threshold).astype(np.int8)
        return bits ^ np.int8(self.polarity)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReadoutChannelModel":
        if "assignment_fidelity" in d:
            return cls.calibrated(d["assignment_fidelity"], d.get("ratio0", 0.0), d.get("ratio1", 0.0),
                                  d.get("mu0", -1.0), d.get("mu1", 1.0))
        return cls(**d)


# --------------------------------------------------------------------------
# Shots
# --------------------------------------------------------------------------


@dataclass
class ShotRecords:
    """Correlated single shots of all measured qubits."""

    voltages: np.ndarray  # (shots, n)
    bits: np.ndarray  # (shots, n) assigned bits
    true_bits: np.ndarray  # (shots, n) projective outcomes
    label: str = ""

    @property
    def n_shots(self) -> int:
        return self.bits.shape[0]

    def outcome_indices(self) -> np.ndarray:
        n = self.bits.shape[1]
        weights = 1 << np.arange(n - 1, -1, -1)
        return self.bits.astype(np.int64) @ weights

    def to_csv(self, path: str | Path) -> None:
        n = self.bits.shape[1]
        header = ["shot_index"]
        for q in range(n):
            header += [f"q{q + 1}_v", f"q{q + 1}_bit"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.n_shots):
                row = [i]
                for q in range(n):
                    row += [f"{self.voltages[i, q]:.6f}", int(self.bits[i, q])]
                w.writerow(row)


def basis_probabilities(rho) -> np.ndarray:
    p = np.clip(np.real(np.diag(_as_array(rho))), 0.0, None)
    return p / p.sum()


def index_to_bits(idx: np.ndarray, n: int) -> np.ndarray:
    idx = np.asarray(idx)
    return ((idx[..., None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)


def sample_shots(rho, models: Sequence[ReadoutChannelModel], n_shots: int, src: RandomStateSource,
                 label: str = "") -> ShotRecords:
    """Sample joint projective outcomes from diag(rho) and emit per-qubit voltages."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    m = _as_array(rho)
    n = num_qubits(m.shape[0])
    if len(models) != n:
        raise ValueError(f"need {n} readout models, got {len(models)}")
    rng = src.generator
    outcomes = rng.choice(2**n, size=n_shots, p=basis_probabilities(m))
    true_bits = index_to_bits(outcomes, n)
    volts = np.empty((n_shots, n))
    bits = np.empty((n_shots, n), dtype=np.int8)
    for q, model in enumerate(models):
        volts[:, q] = model.sample_voltages(true_bits[:, q], rng)
        bits[:, q] = model.assign(volts[:, q])
    return ShotRecords(volts, bits, true_bits, label)


def post_measurement_branches(rho, qubit: int) -> dict[int, tuple[float, np.ndarray]]:
    """Projective Z measurement of one qubit: {bit: (probability, normalized post-state)}."""
    from .quantum import embed_operator

    m = _as_array(rho)
    n = num_qubits(m.shape[0])
    out = {}
    for b in (0, 1):
        p = np.zeros((2, 2), dtype=complex)
        p[b, b] = 1
        proj = embed_operator(p, [qubit], n)
        branch = proj @ m @ proj
        prob = float(np.trace(branch).real)
        out[b] = (prob, branch / prob if prob > 0 else branch)
    return out


def confusion_matrix(models: Sequence[ReadoutChannelModel]) -> np.ndarray:
    """Joint M[s, r] over n-bit outcomes, the tensor product of per-qubit matrices."""
    out = np.ones((1, 1))
    for model in models:
        out = np.kron(out, model.assignment_matrix())
    return out


def reported_distribution(p_true: np.ndarray, models: Sequence[ReadoutChannelModel]) -> np.ndarray:
    """Distribution of assigned bit strings given the projective distribution."""
    p = np.asarray(p_true, dtype=float)
    return p @ confusion_matrix(models)


# --------------------------------------------------------------------------
# Analysis of calibration shots
# --------------------------------------------------------------------------


def _check_voltages(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ValueError(f"{name} is empty")
    return v


def _empirical_fidelity(v0: np.ndarray, v1: np.ndarray, t, flip: bool) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p1_given0 = 1 - np.searchsorted(np.sort(v0), t, side="left") / v0.size
    p1_given1 = 1 - np.searchsorted(np.sort(v1), t, side="left") / v1.size
    if flip:
        p1_given0, p1_given1 = 1 - p1_given0, 1 - p1_given1
    return 1 - (1 - p1_given1) / 2 - p1_given0 / 2


def assignment_fidelity(shots_prep0, shots_prep1, threshold: float | None = None) -> float:
    """Empirical 1 - P(0|1)/2 - P(1|0)/2 from calibration voltages.

    Without an explicit threshold the midpoint of the two sample means is used;
    the state with the larger mean voltage is read as 1.
    """
    v0 = _check_voltages(shots_prep0, "shots_prep0")
    v1 = _check_voltages(shots_prep1, "shots_prep1")
    allv = np.concatenate([v0, v1])
    if np.ptp(allv) == 0:
        raise ValueError("degenerate voltage sets: all voltages identical")
    m0, m1 = v0.mean(), v1.mean()
    t = 0.5 * (m0 + m1) if threshold is None else threshold
    return float(_empirical_fidelity(v0, v1, [t], flip=m1 < m0)[0])


def threshold_calibration(shots_prep0, shots_prep1, n_grid: int = 2001) -> float:
    """Threshold maximizing the empirical assignment fidelity.

    The fidelity is scanned on a uniform grid between the two sample means; the
    centre of the near-optimal plateau is returned to suppress shot noise.
    """
    v0 = _check_voltages(shots_prep0, "shots_prep0")
    v1 = _check_voltages(shots_prep1, "shots_prep1")
    m0, m1 = v0.mean(), v1.mean()
    lo, hi = min(m0, m1), max(m0, m1)
    grid = np.linspace(lo, hi, n_grid)
    s0, s1 = np.sort(v0), np.sort(v1)
    p1_0 = 1 - np.searchsorted(s0, grid, side="left") / v0.size
    p1_1 = 1 - np.searchsorted(s1, grid, side="left") / v1.size
    if m1 < m0:
        p1_0, p1_1 = 1 - p1_0, 1 - p1_1
    fa = 1 - (1 - p1_1) / 2 - p1_0 / 2
    # statistical resolution of the empirical fidelity
    tol = 0.5 / np.sqrt(min(v0.size, v1.size))
    near = grid[fa >= fa.max() - tol]
    return float(0.5 * (near.min() + near.max()))


@dataclass(frozen=True)
class DoubleGaussianFit:
    mu_a: float
    sigma_a: float
    w_a: float
    mu_b: float
    sigma_b: float
    w_b: float
    converged: bool = True
    n_iter: int = 0
    log_likelihood: float = float("nan")

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.mu_a, self.sigma_a, self.w_a, self.mu_b, self.sigma_b, self.w_b)

    @property
    def ratio(self) -> float:
        """Weight of the minor component relative to the major one."""
        return self.w_b / self.w_a


_EM_BINS = 4096


def fit_double_gaussian(voltages, max_iter: int = 2000, tol: float = 1e-10) -> DoubleGaussianFit:
    """Maximum-likelihood two-component Gaussian mixture (EM).

    Component ``a`` is the heavier one. If a single Gaussian is preferred by
    BIC the fit collapses to ``w_a = 1``.

    Raises:
        ReadoutFitError: EM did not converge within ``max_iter``.
    """
    v = np.asarray(voltages, dtype=float).ravel()
    if v.size < 1000:
        raise ValueError("need at least 1000 samples")
    n_tot = v.size
    mu, sd = v.mean(), v.std()
    ll_single = norm.logpdf(v, mu, sd).sum()

    # EM on a fine histogram; bin width is far below any physical scale
    counts, edges = np.histogram(v, bins=_EM_BINS)
    keep = counts > 0
    x = (0.5 * (edges[:-1] + edges[1:]))[keep]
    c = counts[keep].astype(float)

    q_lo, q_hi = np.quantile(v, [0.1, 0.9])
    mus = np.array([q_lo, q_hi])
    sds = np.array([sd / 2, sd / 2])
    ws = np.array([0.5, 0.5])
    ll_mix = -np.inf
    converged = degenerate = False
    for it in range(1, max_iter + 1):
        logp = norm.logpdf(x[:, None], mus, sds) + np.log(ws)
        top = logp.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
        ll = (c * lse).sum()
        if abs(ll - ll_mix) <= tol * abs(ll):
            converged = True
            ll_mix = ll
            break
        ll_mix = ll
        resp = np.exp(logp - lse[:, None]) * c[:, None]
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-9 * n_tot):
            degenerate = True
            break
        ws = nk / n_tot
        mus = (resp * x[:, None]).sum(axis=0) / nk
        sds = np.maximum(np.sqrt((resp * (x[:, None] - mus) ** 2).sum(axis=0) / nk), 1e-9 * sd)
    if not degenerate:
        # exact likelihood on raw samples for the model comparison
        ll_mix = np.logaddexp(
            norm.logpdf(v, mus[0], sds[0]) + np.log(ws[0]), norm.logpdf(v, mus[1], sds[1]) + np.log(ws[1])
        ).sum()

    bic_single = 2 * np.log(n_tot) - 2 * ll_single
    bic_mix = 5 * np.log(n_tot) - 2 * ll_mix
    if degenerate or bic_mix >= bic_single:
        return DoubleGaussianFit(mu, sd, 1.0, mu, sd, 0.0, True, it, ll_single)
    if not converged:
        raise ReadoutFitError(f"double-Gaussian EM did not converge in {max_iter} iterations")
    a, b = (0, 1) if ws[0] >= ws[1] else (1, 0)
    return DoubleGaussianFit(mus[a], sds[a], ws[a], mus[b], sds[b], ws[b], True, it, ll_mix)


def histogram(voltages, bins: int = 100, range_: tuple[float, float] | None = None) -> dict:
    counts, edges = np.histogram(np.asarray(voltages, dtype=float), bins=bins, range=range_)
    return {"bin_edges": edges.tolist(), "counts": counts.tolist()}


def write_histogram_json(path: str | Path, histograms: dict[str, dict]) -> None:
    Path(path).write_text(json.dumps(histograms, indent=2, sort_keys=True))
