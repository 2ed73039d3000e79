import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plaqsim.quantum import (
    BELL_EVEN,
    BELL_ODD,
    GHZ3,
    PLUS,
    DensityMatrix,
    DimensionError,
    I2,
    PureState,
    RandomStateSource,
    X,
    Y,
    Z,
    from_pauli_vector,
    ket,
    partial_trace,
    pauli_expectations,
    pauli_index,
    pauli_label,
    projector,
    random_density_matrix,
    random_pure_state,
    random_state_vectors,
    state_fidelity,
    tensor,
)

PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


def brute_expectation(label, rho):
    op = np.array([[1.0 + 0j]])
    for c in label:
        op = np.kron(op, PAULI[c])
    return np.trace(op @ rho)


def brute_partial_trace_last(rho, dkeep, ddrop):
    out = np.zeros((dkeep, dkeep), dtype=complex)
    for i in range(dkeep):
        for j in range(dkeep):
            for k in range(ddrop):
                out[i, j] += rho[i * ddrop + k, j * ddrop + k]
    return out


def test_tensor_examples():
    assert np.allclose(tensor(I2, I2), np.eye(4))
    zx = tensor(Z, X)
    assert np.allclose(zx[:2, :2], X) and np.allclose(zx[2:, 2:], -X)
    assert np.allclose(zx[:2, 2:], 0) and np.allclose(zx[2:, :2], 0)
    assert np.allclose(tensor(projector(ket("0")), projector(ket("1"))), np.diag([0, 1, 0, 0]))


def test_tensor_overflow():
    with pytest.raises(DimensionError):
        tensor(I2, I2, I2, I2, I2)
    assert tensor(I2, I2, I2, I2, I2, max_qubits=5).shape == (32, 32)


def test_partial_trace_examples():
    rho = tensor(projector(ket("0")), projector(PLUS))
    assert np.allclose(partial_trace(rho, [0]), projector(ket("0")))
    assert np.allclose(partial_trace(projector(BELL_EVEN), [1]), np.eye(2) / 2)
    with pytest.raises(ValueError):
        partial_trace(rho, [])


def test_partial_trace_matches_brute_force():
    src = RandomStateSource(11)
    rho = random_density_matrix(src, 3)
    assert np.allclose(partial_trace(rho, [0, 1]), brute_partial_trace_last(rho, 4, 2))
    # keep qubits 0 and 2: move qubit 1 last first
    t = rho.reshape([2] * 6).transpose(0, 2, 1, 3, 5, 4).reshape(8, 8)
    assert np.allclose(partial_trace(rho, [0, 2]), brute_partial_trace_last(t, 4, 2))


def test_partial_trace_post_pcp_state():
    # CNOTs Q1->Q2, Q3->Q2 as explicit permutation matrices on |q1 q2 q3>
    def cnot_perm(c, t):
        m = np.zeros((8, 8))
        for b in range(8):
            bits = [(b >> (2 - q)) & 1 for q in range(3)]
            if bits[c]:
                bits[t] ^= 1
            m[bits[0] * 4 + bits[1] * 2 + bits[2], b] = 1
        return m

    code = np.kron(PLUS, PLUS)
    psi = np.kron(np.kron(PLUS, ket("0")), PLUS)
    out = cnot_perm(2, 1) @ cnot_perm(0, 1) @ psi
    reduced = partial_trace(projector(out), [0, 2])
    pe = np.diag([1, 0, 0, 1]).astype(complex)
    po = np.eye(4) - pe
    rho = projector(code)
    assert np.allclose(reduced, pe @ rho @ pe + po @ rho @ po, atol=1e-12)


def test_pauli_index_bijection():
    for n in (1, 2, 3):
        for k in range(4**n):
            assert pauli_index(pauli_label(k, n)) == k
    assert pauli_label(1, 2) == "IX"
    assert pauli_label(4, 2) == "XI"
    assert pauli_index("ZZ") == 15


def test_pauli_expectations_maximally_mixed():
    v = pauli_expectations(np.eye(8) / 8)
    assert v[0] == pytest.approx(1.0)
    assert np.allclose(v[1:], 0)


def test_pauli_expectations_ghz_against_brute_force():
    rho = projector(GHZ3)
    v = pauli_expectations(rho)
    for k, label in enumerate(itertools.product("IXYZ", repeat=3)):
        assert v[k] == pytest.approx(brute_expectation(label, rho).real, abs=1e-12)
    get = lambda s: v[pauli_index(s)]
    assert get("XXX") == pytest.approx(1)
    for s in ("ZZI", "IZZ", "ZIZ"):
        assert get(s) == pytest.approx(1)
    for s in ("XYY", "YXY", "YYX"):
        assert get(s) == pytest.approx(-1)
    for s in ("XII", "IYI", "IIZ", "ZII"):
        assert get(s) == pytest.approx(0, abs=1e-12)


def test_pauli_expectations_odd_bell():
    rho = projector(BELL_ODD)
    v = pauli_expectations(rho)
    expected = {"XX": 1, "YY": 1, "ZZ": -1, "ZI": 0, "IZ": 0}
    for s, val in expected.items():
        assert v[pauli_index(s)] == pytest.approx(brute_expectation(s, rho).real, abs=1e-12)
        assert v[pauli_index(s)] == pytest.approx(val, abs=1e-12)


def test_pauli_vector_round_trip():
    rho = random_density_matrix(RandomStateSource(3), 3)
    assert np.allclose(from_pauli_vector(pauli_expectations(rho)), rho)


def test_state_fidelity_examples():
    ghz = projector(GHZ3)
    assert state_fidelity(ghz, ghz) == pytest.approx(1.0, abs=1e-10)
    assert state_fidelity(ghz, np.eye(8) / 8) == pytest.approx(1 / 8)
    # pure ideal: F = <psi|rho|psi>
    assert state_fidelity(ghz, np.eye(8) / 8) == pytest.approx((GHZ3.conj() @ (np.eye(8) / 8) @ GHZ3).real)
    dephased = np.diag([0.5, 0, 0, 0, 0, 0, 0, 0.5])
    assert state_fidelity(ghz, dephased) == pytest.approx(0.5)


def test_state_fidelity_rejects_non_hermitian():
    with pytest.raises(ValueError):
        state_fidelity(np.array([[1, 1], [0, 0]]), np.eye(2) / 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_state_fidelity_symmetric(seed, n):
    src = RandomStateSource(seed)
    a = random_density_matrix(src, n)
    b = random_density_matrix(src, n)
    assert state_fidelity(a, b) == pytest.approx(state_fidelity(b, a), abs=1e-10)
    assert 0.0 <= state_fidelity(a, b) <= 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_identity_pauli_equals_trace(seed, n):
    rho = random_density_matrix(RandomStateSource(seed), n)
    assert pauli_expectations(rho)[0] == pytest.approx(np.trace(rho).real, abs=1e-12)


def test_density_matrix_validation():
    DensityMatrix.basis("010")
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.5, 0.4]))
    with pytest.raises(ValueError):
        DensityMatrix(np.array([[0.5, 1], [0, 0.5]]))
    assert DensityMatrix(np.diag([1.1, -0.1])).is_physical() is False
    with pytest.raises(ValueError):
        PureState([1, 1])


def test_random_pure_state_deterministic():
    a = random_pure_state(RandomStateSource(42), 3)
    b = random_pure_state(RandomStateSource(42), 3)
    assert np.array_equal(a.amplitudes, b.amplitudes)
    c = random_pure_state(RandomStateSource(43), 3)
    assert not np.allclose(a.amplitudes, c.amplitudes)


def test_split_sources_are_reproducible_and_distinct():
    src = RandomStateSource(7)
    a1 = src.split(3).generator.random(4)
    a2 = RandomStateSource(7).split(3).generator.random(4)
    b = src.split(4).generator.random(4)
    assert np.array_equal(a1, a2)
    assert not np.allclose(a1, b)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_random_states_haar_moments(n):
    draws = 100_000
    psi = random_state_vectors(RandomStateSource(2024 + n), n, draws)
    p0 = np.abs(psi[:, 0]) ** 2
    d = 2**n
    # Haar: |<0|psi>|^2 ~ Beta(1, d-1), mean 1/d, var (d-1)/(d^2 (d+1))
    sigma = np.sqrt((d - 1) / (d**2 * (d + 1)) / draws)
    assert abs(p0.mean() - 1 / d) < 3 * sigma
    # a non-identity Pauli expectation has mean 0 and variance 1/(d+1)
    zexp = (np.abs(psi[:, : d // 2]) ** 2).sum(1) - (np.abs(psi[:, d // 2 :]) ** 2).sum(1)
    assert abs(zexp.mean()) < 3 * np.sqrt(1 / (d + 1) / draws)
