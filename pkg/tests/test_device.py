import json
import math

import numpy as np
import pytest
import scipy.linalg

from plaqsim.channels import QuantumChannel, average_gate_fidelity
from plaqsim.device import (
    CNOT,
    DeviceParams,
    GateSpec,
    NoiseModel,
    QubitParams,
    UnknownGateError,
    amplitude_damping,
    calibrate_residue_to_fidelity,
    cnot_from_zx90,
    dephasing_time_us,
    gate_channel,
    layer_channel,
    load_device,
    pure_dephasing,
    sequence_unitary,
    zx90_unitary,
)
from plaqsim.quantum import PLUS, X, Z, global_phase_distance, ket, projector, tensor

DEVICE = load_device()
NOISELESS = NoiseModel.noiseless()


def test_bundled_device_values():
    assert [q.t1_us for q in DEVICE.qubits] == [24, 29, 20]
    assert [q.t2echo_us for q in DEVICE.qubits] == [32, 25, 18]
    assert DEVICE.single_qubit_gate_ns == 40 and DEVICE.two_qubit_gate_ns == 350
    fa = [m.assignment_fidelity() for m in DEVICE.readout]
    assert fa == pytest.approx([0.84, 0.91, 0.89], abs=1e-9)


def test_device_json_round_trip(tmp_path):
    d = DEVICE.with_two_qubit_residue(0, 1, 0.01)
    path = tmp_path / "dev.json"
    path.write_text(json.dumps(d.to_dict()))
    again = load_device(path)
    assert again.two_qubit_residue(1, 0) == 0.01
    assert again.qubits == d.qubits


def test_malformed_device_rejected():
    with pytest.raises(ValueError):
        DeviceParams.from_dict({"qubits": [{"T1_us": 10}]})
    with pytest.raises(ValueError):
        QubitParams("Q", t1_us=10, t2echo_us=25)


def test_amplitude_damping_examples():
    assert amplitude_damping(0, 24).allclose(QuantumChannel.identity(1))
    out = amplitude_damping(1e9, 24).apply(projector(ket("1")))
    assert np.allclose(out, projector(ket("0")), atol=1e-12)
    gamma = 1 - math.exp(-0.35 / 24)
    assert gamma == pytest.approx(0.01448, abs=5e-6)
    out = amplitude_damping(350, 24).apply(projector(ket("1")))
    assert out[0, 0].real == pytest.approx(gamma, abs=1e-12)
    with pytest.raises(ValueError):
        amplitude_damping(-1, 24)


def test_amplitude_damping_semigroup():
    a = amplitude_damping(120, 24) @ amplitude_damping(230, 24)
    assert a.allclose(amplitude_damping(350, 24), atol=1e-10)


def test_pure_dephasing_examples():
    assert math.isinf(dephasing_time_us(20, 40))
    assert pure_dephasing(500, 20, 40).allclose(QuantumChannel.identity(1))
    t_phi = dephasing_time_us(20, 18)
    assert t_phi == pytest.approx(1 / (1 / 18 - 1 / 40))
    assert t_phi == pytest.approx(32.7, abs=0.05)
    out = pure_dephasing(1000 * t_phi, 20, 18).apply(projector(PLUS))
    assert out[0, 1].real == pytest.approx(0.5 * math.exp(-1), abs=1e-12)
    with pytest.raises(ValueError):
        pure_dephasing(10, 20, 41)


def test_identity_gate_ptm_matches_t1_t2():
    t = 350.0
    ch = gate_channel(GateSpec("I", (0,), duration_ns=t), DEVICE, NoiseModel(), device_qubits=(1,))
    r = ch.ptm
    t1, t2 = 29e3, 25e3
    assert r[3, 3] == pytest.approx(math.exp(-t / t1), abs=1e-12)
    assert r[1, 1] == pytest.approx(math.exp(-t / t2), abs=1e-12)
    assert r[2, 2] == pytest.approx(math.exp(-t / t2), abs=1e-12)
    # relaxation pushes population towards |0>
    assert r[3, 0] == pytest.approx(1 - math.exp(-t / t1), abs=1e-12)


def test_noiseless_gate_is_unitary_channel():
    spec = GateSpec("ZX90", (0, 1))
    ch = gate_channel(spec, DEVICE, NOISELESS)
    assert ch.allclose(QuantumChannel.from_unitary(zx90_unitary()))


@pytest.mark.parametrize("name,targets", [("X90", (2,)), ("H", (0,)), ("ZX90", (0, 1)), ("ZU180", (2, 1))])
def test_gate_channels_cptp(name, targets):
    params = DEVICE.with_two_qubit_residue(0, 1, 0.03).with_single_qubit_residue(0, 0.002)
    ch = gate_channel(GateSpec(name, targets), params, NoiseModel())
    assert ch.choi_min_eigenvalue() >= -1e-10
    assert ch.is_trace_preserving(1e-10)


def test_unknown_gate():
    with pytest.raises(UnknownGateError):
        GateSpec("FOO", (0,))
    with pytest.raises(ValueError):
        GateSpec("ZX90", (1, 1))


def test_zx90_examples():
    u = zx90_unitary()
    assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-12)
    assert np.allclose(np.linalg.matrix_power(u, 4), -np.eye(4), atol=1e-12)
    oracle = scipy.linalg.expm(-1j * np.pi / 4 * np.kron(Z, X))
    assert np.allclose(u, oracle, atol=1e-12)
    out = u @ ket("00")
    c = math.cos(math.pi / 4)
    assert np.allclose(out, c * ket("00") - 1j * c * ket("01"), atol=1e-12)
    zi = tensor(Z, np.eye(2))
    assert np.allclose(u @ zi, zi @ u, atol=1e-12)


def test_cnot_decomposition():
    gates = cnot_from_zx90()
    assert sum(g.name == "ZX90" for g in gates) == 1
    u = sequence_unitary(gates, 2)
    assert global_phase_distance(u, CNOT) < 1e-12
    assert global_phase_distance((u @ ket("10"))[:, None], ket("11")[:, None]) < 1e-12
    bell = (ket("00") + ket("11")) / math.sqrt(2)
    assert abs(abs(np.vdot(bell, u @ np.kron(PLUS, ket("0")))) - 1) < 1e-12


def test_cnot_twice_is_identity_channel():
    gates = cnot_from_zx90(2, 1, 3)
    ch = QuantumChannel.identity(3)
    for g in gates + gates:
        ch = layer_channel((g,), 3, DEVICE, NOISELESS) @ ch
    assert ch.allclose(QuantumChannel.identity(3), atol=1e-10)


def test_native_cnot_folds_trailing_x():
    gates = cnot_from_zx90(native=True)
    assert gates[2].name == "X" and gates[2].duration(DEVICE) == 0.0
    assert global_phase_distance(sequence_unitary(gates, 2), CNOT) < 1e-12


def test_average_fidelity_monotone_in_residue():
    ideal = QuantumChannel.from_unitary(zx90_unitary())
    fids = []
    for lam in (0.0, 0.02, 0.05):
        spec = GateSpec("ZX90", (0, 1), depolarizing_residue=lam)
        fids.append(average_gate_fidelity(ideal, gate_channel(spec, DEVICE, NoiseModel())))
    assert fids[0] >= fids[1] >= fids[2]


def test_residue_tuned_to_gate_fidelity():
    lam = calibrate_residue_to_fidelity(0.962, (0, 1), DEVICE)
    spec = GateSpec("ZX90", (0, 1), depolarizing_residue=lam)
    ideal = QuantumChannel.from_unitary(zx90_unitary())
    f = average_gate_fidelity(ideal, gate_channel(spec, DEVICE, NoiseModel()))
    assert f == pytest.approx(0.962, abs=1e-3)


def test_layer_idle_decoherence():
    # a 40 ns gate in a 350 ns layer idles for the remaining 310 ns
    layer = (GateSpec("I", (0,)), GateSpec("ZX90", (2, 1)))
    ch = layer_channel(layer, 3, DEVICE, NoiseModel(gate_depolarizing=False))
    rho = ch.apply(projector(np.kron(ket("1"), ket("00"))))
    p1 = rho[4, 4].real + rho[5, 5].real + rho[6, 6].real + rho[7, 7].real
    assert p1 == pytest.approx(math.exp(-350 / 24e3), abs=1e-12)
    with pytest.raises(ValueError):
        layer_channel((GateSpec("X", (0,)), GateSpec("ZX90", (0, 1))), 3, DEVICE, NOISELESS)
