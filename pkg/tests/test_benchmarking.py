import numpy as np
import pytest
from scipy import stats

from plaqsim.benchmarking import (
    TARGET_R_1Q,
    RBFitError,
    average_clifford_error,
    build_clifford_group,
    clifford_keys,
    fit_decay,
    generate_rb_sequence,
    run_rb,
    simultaneous_rb,
)
from plaqsim.device import NoiseModel, load_device
from plaqsim.quantum import RandomStateSource, global_phase_distance

DEVICE = load_device()
REFERENCE = load_device(paper_noise=True)
C1 = build_clifford_group(1)
C2 = build_clifford_group(2)


def _ptm(u):
    from plaqsim.channels import QuantumChannel

    return QuantumChannel.from_unitary(u).ptm


def test_single_qubit_group():
    assert len(C1) == 24
    ptms = {np.rint(_ptm(u)).astype(int).tobytes() for u in C1.unitaries}
    assert len(ptms) == 24
    assert np.mean([len(w) for w in C1.words]) == pytest.approx(1.875)


def test_two_qubit_group_order_and_zx_average():
    assert len(C2) == 11520
    assert abs(C2.mean_zx_count - 1.5) < 0.01
    counts = np.bincount([C2.zx_count(i) for i in range(len(C2))])
    assert counts.tolist() == [576, 5184, 5184, 576]


def test_full_ptm_hash_agrees_with_generator_key():
    g = np.random.default_rng(0)
    idx = g.choice(len(C2), 400, replace=False)
    full = {np.rint(_ptm(C2.unitaries[i])).astype(int).tobytes() for i in idx}
    assert len(full) == 400


@pytest.mark.parametrize("group", [C1, C2], ids=["1q", "2q"])
def test_closure_and_inverses(group):
    g = np.random.default_rng(1)
    for _ in range(1000):
        a, b = g.integers(len(group), size=2)
        c = group.compose(a, b)
        assert 0 <= c < len(group)
    for i in g.integers(len(group), size=50):
        j = group.inverse(i)
        assert global_phase_distance(group.unitaries[j] @ group.unitaries[i], np.eye(2**group.n)) < 1e-10


def test_compiled_words_match_elements():
    from plaqsim.circuits import Circuit

    g = np.random.default_rng(2)
    for i in list(g.choice(len(C2), 300, replace=False)) + [0, len(C2) - 1]:
        circ = Circuit(2, tuple(C2.gate_layers(int(i))))
        assert global_phase_distance(circ.unitary(), C2.unitaries[i]) < 1e-10
    for i in range(24):
        circ = Circuit(1, tuple(C1.gate_layers(i)))
        assert global_phase_distance(circ.unitary(), C1.unitaries[i]) < 1e-10


def test_non_clifford_rejected():
    t = np.diag([1, np.exp(1j * np.pi / 4)])
    with pytest.raises(ValueError):
        clifford_keys(t[None])


def test_uniform_sampling():
    draws = RandomStateSource(3).generator.integers(len(C1), size=100_000)
    assert stats.chisquare(np.bincount(draws, minlength=24)).pvalue > 1e-3


def test_sequence_identity_recovery_and_determinism():
    ident = C1.lookup(np.eye(2))
    seq = generate_rb_sequence(C1, 1, elements=[ident])
    assert seq.recovery == ident
    a = generate_rb_sequence(C2, 10, RandomStateSource(4))
    b = generate_rb_sequence(C2, 10, RandomStateSource(4))
    assert a.elements == b.elements and a.recovery == b.recovery
    with pytest.raises(ValueError):
        generate_rb_sequence(C1, 0, RandomStateSource(4))


def test_noiseless_survival_is_one():
    noiseless = NoiseModel.noiseless()
    for m in (1, 7, 20):
        seq = generate_rb_sequence(C2, m, RandomStateSource(m))
        out = seq.circuit.channel(DEVICE, noiseless).apply(np.diag([1.0, 0, 0, 0]))
        assert out[0, 0].real == pytest.approx(1.0, abs=1e-10)


def test_injected_depolarizing_two_qubit():
    res = run_rb(C2, params=DEVICE, src=RandomStateSource(5), depolarizing_per_clifford=0.058)
    assert abs(res.r / 0.058 - 1) < 0.1
    assert res.reduced_chi2 < 2
    assert 0 < res.p <= 1


def test_injected_depolarizing_one_qubit():
    res = run_rb(C1, params=DEVICE, src=RandomStateSource(6), depolarizing_per_clifford=3e-3, shots=4096)
    assert abs(res.r / 3e-3 - 1) < 0.1
    assert res.reduced_chi2 < 2


def test_fit_recovers_synthetic_parameters():
    g = np.random.default_rng(7)
    m = np.array([1, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100])
    a, p, b, sigma = 0.45, 0.99, 0.5, 0.004
    z = []
    for _ in range(50):
        y = a * p**m + b + g.normal(0, sigma, m.size)
        fa, fb, fp, fse, chi2 = fit_decay(m, y, np.full(m.size, sigma), 1)
        z.append((fp - p) / fse)
    z = np.abs(z)
    assert np.mean(z < 3) >= 0.96


def test_fit_needs_enough_points():
    with pytest.raises(RBFitError):
        fit_decay([1, 2, 3], [1, 0.9, 0.8], None, 1)


def test_length_validation():
    with pytest.raises(ValueError):
        run_rb(C1, lengths=(5, 3, 10, 20), params=DEVICE)


def test_simultaneous_without_crosstalk_matches_isolated():
    noise = NoiseModel(decoherence=False, readout_confusion=False)
    lengths = (1, 10, 20, 40, 60, 80, 100)
    sim = simultaneous_rb(REFERENCE, noise, src=RandomStateSource(8), lengths=lengths, n_seeds=20)
    for q in range(3):
        iso = run_rb(C1, lengths, 20, REFERENCE, noise, src=RandomStateSource(9 + q), device_qubits=(q,))
        assert abs(sim[q].r - iso.r) < 3 * np.hypot(sim[q].r_stderr, iso.r_stderr)


def test_crosstalk_raises_simultaneous_error():
    lengths = (1, 10, 20, 40, 60, 80, 100)
    quiet = simultaneous_rb(REFERENCE, NoiseModel(readout_confusion=False), src=RandomStateSource(10),
                            lengths=lengths, n_seeds=10, shots=None)
    loud = simultaneous_rb(REFERENCE, NoiseModel(readout_confusion=False, crosstalk_zz=1e-3),
                           src=RandomStateSource(10), lengths=lengths, n_seeds=10, shots=None)
    # Q2 neighbours both other qubits, so it sees the most crosstalk
    assert loud[1].r > quiet[1].r
    assert all(b.r >= a.r for a, b in zip(quiet, loud))


def test_calibrated_residues_hit_targets():
    noise = NoiseModel(readout_confusion=False)
    for q, target in enumerate(TARGET_R_1Q):
        assert average_clifford_error(C1, REFERENCE, noise, (q,)) == pytest.approx(target, rel=1e-3)


@pytest.mark.parametrize("pair,target", [((0, 1), 0.058), ((2, 1), 0.065)])
def test_reference_two_qubit_rb(pair, target):
    res = run_rb(C2, params=REFERENCE, device_qubits=pair, src=RandomStateSource(11))
    assert abs(res.r - target) < 0.01


def test_reference_single_qubit_rb_q2():
    res = run_rb(C1, params=REFERENCE, device_qubits=(1,), src=RandomStateSource(12), shots=4096)
    assert abs(res.r / 2.30e-3 - 1) < 0.2
    d = res.to_dict()
    assert d["n_qubits"] == 1 and len(d["survival"]) == len(res.lengths)
    assert res.to_csv().splitlines()[0] == "m,survival,stderr"
