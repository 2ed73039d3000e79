import itertools

import numpy as np
import pytest

from plaqsim.channels import QuantumChannel
from plaqsim.circuits import (
    EVEN_PARITY_BIT,
    Circuit,
    code_input_state,
    conditioned_code_states,
    ghz_circuit,
    pair_circuit,
    parity_bit,
    pcp_circuit,
    run,
    syndrome_probabilities,
    target_state,
)
from plaqsim.device import GateSpec, NoiseModel, load_device
from plaqsim.quantum import (
    BELL_EVEN,
    BELL_ODD,
    RandomStateSource,
    embed_operator,
    ket,
    partial_trace,
    projector,
    random_density_matrix,
    state_fidelity,
    von_neumann_entropy,
)

DEVICE = load_device()
NOISELESS = NoiseModel.noiseless()
H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
X = np.array([[0, 1], [1, 0]])


def cnot_perm(c, t):
    m = np.zeros((8, 8))
    for b in range(8):
        bits = [(b >> (2 - q)) & 1 for q in range(3)]
        if bits[c]:
            bits[t] ^= 1
        m[bits[0] * 4 + bits[1] * 2 + bits[2], b] = 1
    return m


# ideal parity check in the even->1 convention, built from permutation matrices
ORACLE_PCP = embed_operator(X, [1], 3) @ cnot_perm(2, 1) @ cnot_perm(0, 1)


def test_empty_circuit_is_identity():
    rho = random_density_matrix(RandomStateSource(0), 3)
    out = run(Circuit(3, ()), DEVICE, NoiseModel(), rho).final_state.matrix
    assert np.allclose(out, rho, atol=1e-12)


def test_x_on_syndrome():
    c = Circuit(3, ((GateSpec("X", (1,)),),))
    out = run(c, DEVICE, NOISELESS).final_state.matrix
    assert np.allclose(out, projector(ket("010")), atol=1e-12)


def test_initial_dimension_mismatch():
    with pytest.raises(ValueError):
        run(pcp_circuit(), DEVICE, NOISELESS, np.eye(4) / 4)


@pytest.mark.parametrize("simultaneous", [True, False])
def test_pcp_matches_permutation_oracle(simultaneous):
    u = pcp_circuit("Z", simultaneous=simultaneous).unitary()
    ov = np.trace(ORACLE_PCP.T @ u)
    assert abs(abs(ov) - 8) < 1e-10


@pytest.mark.parametrize("bits", ["00", "01", "10", "11"])
def test_pcp_truth_table(bits):
    out = run(pcp_circuit("Z"), DEVICE, NOISELESS, code_input_state(bits)).final_state
    p = syndrome_probabilities(out)
    expected = parity_bit(bits)
    assert p[expected] == pytest.approx(1.0, abs=1e-10)
    assert expected == (EVEN_PARITY_BIT if bits in ("00", "11") else 1 - EVEN_PARITY_BIT)
    # code qubits unchanged
    code = partial_trace(out.matrix, [0, 2])
    assert state_fidelity(projector(ket(bits)), code) == pytest.approx(1.0, abs=1e-10)


def test_pcp_plus_plus_ghz_like():
    out = run(pcp_circuit("Z"), DEVICE, NOISELESS, code_input_state("++")).final_state.matrix
    # pure and locally equivalent to GHZ: every single-qubit marginal is maximally mixed
    assert np.trace(out @ out).real == pytest.approx(1.0, abs=1e-10)
    for q in range(3):
        assert np.allclose(partial_trace(out, [q]), np.eye(2) / 2, atol=1e-10)
    branches = conditioned_code_states(out)
    fe = state_fidelity(projector(BELL_EVEN), branches[EVEN_PARITY_BIT][1])
    fo = state_fidelity(projector(BELL_ODD), branches[1 - EVEN_PARITY_BIT][1])
    assert fe == pytest.approx(1.0, abs=1e-10) and fo == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("code", ["++", "+-", "-+", "--"])
def test_x_pcp_deterministic(code):
    out = run(pcp_circuit("X"), DEVICE, NOISELESS, code_input_state(code)).final_state
    even = code.count("-") % 2 == 0
    p = syndrome_probabilities(out)
    assert p[EVEN_PARITY_BIT if even else 1 - EVEN_PARITY_BIT] == pytest.approx(1.0, abs=1e-10)


def test_x_pcp_is_hadamard_conjugate():
    hh = QuantumChannel.from_unitary(embed_operator(np.kron(H, H), [0, 2], 3))
    z = pcp_circuit("Z").channel(DEVICE, NOISELESS)
    x = pcp_circuit("X").channel(DEVICE, NOISELESS)
    assert x.allclose(hh @ z @ hh, atol=1e-10)


def test_noiseless_pcp_conserves_basis_inputs():
    for bits in itertools.product("01", repeat=2):
        rho = code_input_state("".join(bits))
        out = run(pcp_circuit(), DEVICE, NOISELESS, rho).final_state.matrix
        assert state_fidelity(partial_trace(rho, [0, 2]), partial_trace(out, [0, 2])) == pytest.approx(1, abs=1e-10)


def test_run_is_linear():
    src = RandomStateSource(4)
    a, b = random_density_matrix(src, 3), random_density_matrix(src, 3)
    c = pcp_circuit("X")
    noise = NoiseModel()
    mix = run(c, DEVICE, noise, 0.3 * a + 0.7 * b).final_state.matrix
    sep = 0.3 * run(c, DEVICE, noise, a).final_state.matrix + 0.7 * run(c, DEVICE, noise, b).final_state.matrix
    assert np.abs(mix - sep).max() < 1e-12


def test_ghz_noiseless_and_commuting_order():
    c = ghz_circuit()
    out = run(c, DEVICE, NOISELESS).final_state
    target = projector(target_state(c))
    assert state_fidelity(target, out) == pytest.approx(1.0, abs=1e-10)
    swapped = run(ghz_circuit(order=(2, 0)), DEVICE, NOISELESS).final_state.matrix
    assert np.abs(swapped - out.matrix).max() < 1e-10
    # GHZ class: three ZZ-type stabilizers up to the local frame, and all marginals mixed
    assert len(c.meta["target_stabilizers"]) == 7
    for q in range(3):
        assert np.allclose(partial_trace(target, [q]), np.eye(2) / 2)


@pytest.mark.parametrize("which,pair", [("q1q2", [0, 1]), ("q3q2", [1, 2])])
def test_pair_noiseless(which, pair):
    c = pair_circuit(which)
    out = run(c, DEVICE, NOISELESS).final_state.matrix
    two = partial_trace(out, pair)
    assert np.trace(two @ two).real == pytest.approx(1.0, abs=1e-10)
    marginal = partial_trace(out, [pair[0]])
    assert von_neumann_entropy(marginal) == pytest.approx(1.0, abs=1e-10)
    idle = ({0, 1, 2} - set(pair)).pop()
    assert partial_trace(out, [idle])[0, 0].real >= 0.999


def test_circuit_json_round_trip():
    c = pcp_circuit("X", native=True)
    again = Circuit.from_json(c.to_json())
    assert again.layers == c.layers and again.meta == c.meta
    d = c.to_dict(DEVICE)
    assert d["layers"][0][0]["duration_ns"] == 80.0


def test_layer_validation():
    with pytest.raises(ValueError):
        Circuit(3, ((GateSpec("X", (0,)), GateSpec("Y", (0,))),))
    with pytest.raises(ValueError):
        Circuit(3, ((GateSpec("ZX90", (0, 1)), GateSpec("ZX90", (1, 2))),))
    Circuit(3, ((GateSpec("ZX90", (0, 1)), GateSpec("ZX90", (2, 1))),))


def test_from_gates_asap():
    gates = [GateSpec("X", (0,)), GateSpec("X", (2,)), GateSpec("ZX90", (0, 1)), GateSpec("Y", (2,))]
    c = Circuit.from_gates(gates, 3)
    assert [len(layer) for layer in c.layers] == [2, 2]
