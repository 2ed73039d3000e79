import csv
import json

import numpy as np
import pytest
from scipy import stats

from plaqsim.quantum import PLUS, GHZ3, RandomStateSource, ket, projector
from plaqsim.readout import (
    ReadoutChannelModel,
    ReadoutFitError,
    assignment_fidelity,
    basis_probabilities,
    confusion_matrix,
    fit_double_gaussian,
    histogram,
    post_measurement_branches,
    reported_distribution,
    sample_shots,
    threshold_calibration,
    write_histogram_json,
)

Q2 = ReadoutChannelModel.calibrated(0.91, 0.057, 0.083)


def gaussian_shots(seed, mu0=-1.0, mu1=1.0, s0=1.0, s1=1.0, n=100_000):
    g = np.random.default_rng(seed)
    return g.normal(mu0, s0, n), g.normal(mu1, s1, n)


def test_ground_state_all_zero():
    m = ReadoutChannelModel(sigma0=0.05, sigma1=0.05)
    shots = sample_shots(projector(ket("0")), [m], 1000, RandomStateSource(1))
    assert not shots.bits.any()


def test_born_rule_plus_state():
    m = ReadoutChannelModel.ideal()
    shots = sample_shots(projector(PLUS), [m], 100_000, RandomStateSource(2))
    assert (shots.bits[:, 0] == 0).mean() == pytest.approx(0.5, abs=0.005)


def test_q2_excited_fraction_binomial():
    n = 100_000
    shots = sample_shots(projector(ket("1")), [Q2], n, RandomStateSource(3))
    p = 1 - Q2.assignment_matrix()[1, 0]
    frac = shots.bits.mean()
    assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_calibrated_models_hit_targets():
    for fa, r0, r1 in ((0.84, 0.099, 0.22), (0.91, 0.057, 0.083), (0.89, 0.137, 0.060)):
        m = ReadoutChannelModel.calibrated(fa, r0, r1)
        assert m.assignment_fidelity() == pytest.approx(fa, abs=1e-10)
        assert np.allclose(m.assignment_matrix().sum(axis=1), 1)


def test_assignment_fidelity_separated():
    assert assignment_fidelity([-1.0, -1.1, -0.9], [1.0, 1.2, 0.8]) == 1.0
    with pytest.raises(ValueError):
        assignment_fidelity([0.3, 0.3], [0.3])
    with pytest.raises(ValueError):
        assignment_fidelity([], [1.0])


def test_assignment_fidelity_gaussian_closed_form():
    # separation 2 sigma -> each error is Phi(-1)
    v0, v1 = gaussian_shots(4)
    expected = stats.norm.cdf(1.0)
    assert expected == pytest.approx(0.8413, abs=1e-4)
    assert assignment_fidelity(v0, v1) == pytest.approx(expected, abs=0.005)


def test_assignment_fidelity_affine_invariant():
    v0, v1 = gaussian_shots(5, n=20_000)
    f = assignment_fidelity(v0, v1)
    assert assignment_fidelity(3.7 * v0 + 12, 3.7 * v1 + 12) == pytest.approx(f, abs=1e-12)
    # negative scaling swaps which state has the larger mean
    assert assignment_fidelity(-2 * v0 + 1, -2 * v1 + 1) == pytest.approx(f, abs=1e-12)


def test_threshold_symmetric_is_midpoint():
    v0, v1 = gaussian_shots(6)
    assert threshold_calibration(v0, v1) == pytest.approx(0.0, abs=0.05)


def test_threshold_unequal_sigma_matches_grid_oracle():
    v0, v1 = gaussian_shots(7, s0=0.4, s1=1.2, n=200_000)
    grid = np.linspace(-1, 1, 4001)
    fa = 1 - stats.norm.cdf(grid, 1, 1.2) / 2 - stats.norm.sf(grid, -1, 0.4) / 2
    oracle = grid[np.argmax(fa)]
    t = threshold_calibration(v0, v1)
    assert t < 0  # shifted toward the narrow Gaussian
    assert t == pytest.approx(oracle, abs=0.05)
    f_t = 1 - stats.norm.cdf(t, 1, 1.2) / 2 - stats.norm.sf(t, -1, 0.4) / 2
    assert f_t == pytest.approx(fa.max(), abs=1e-3)


def test_calibrated_threshold_not_worse_than_midpoint():
    src = RandomStateSource(8)
    g = src.generator
    v0 = Q2.sample_voltages(np.zeros(100_000, int), g)
    v1 = Q2.sample_voltages(np.ones(100_000, int), g)
    t = threshold_calibration(v0, v1)
    assert Q2.assignment_fidelity(t) >= Q2.assignment_fidelity(0.0) - 1e-3
    assert assignment_fidelity(v0, v1, t) >= assignment_fidelity(v0, v1) - 1e-3


def test_fit_recovers_synthetic_mixture():
    g = np.random.default_rng(9)
    v = np.concatenate([g.normal(-1, 0.5, 90_000), g.normal(1, 0.5, 10_000)])
    fit = fit_double_gaussian(v)
    assert fit.w_a == pytest.approx(0.9, abs=0.01)
    assert fit.w_b == pytest.approx(0.1, abs=0.01)
    assert fit.w_a + fit.w_b == pytest.approx(1.0)


def test_fit_single_gaussian_degenerates():
    v = np.random.default_rng(10).normal(0.3, 0.7, 20_000)
    assert fit_double_gaussian(v).w_a >= 0.99


def test_fit_q1_excited_ratio():
    q1 = ReadoutChannelModel.calibrated(0.84, 0.099, 0.22)
    v = q1.sample_voltages(np.ones(100_000, int), RandomStateSource(11).generator)
    assert fit_double_gaussian(v).ratio == pytest.approx(0.22, abs=0.01)


def test_fit_input_guards():
    with pytest.raises(ValueError):
        fit_double_gaussian(np.zeros(10))
    v = np.concatenate([np.random.default_rng(1).normal(-1, 0.3, 5000), np.random.default_rng(2).normal(1, 0.3, 5000)])
    with pytest.raises(ReadoutFitError):
        fit_double_gaussian(v, max_iter=2)


def test_marginals_match_confusion_chi_square():
    models = [ReadoutChannelModel.calibrated(0.84, 0.099, 0.22), Q2,
              ReadoutChannelModel.calibrated(0.89, 0.137, 0.06)]
    rho = projector(GHZ3)
    n = 100_000
    shots = sample_shots(rho, models, n, RandomStateSource(12))
    expected = reported_distribution(basis_probabilities(rho), models)
    observed = np.bincount(shots.outcome_indices(), minlength=8)
    chi2 = stats.chisquare(observed, n * expected)
    assert chi2.pvalue > 1e-3
    assert np.allclose(confusion_matrix(models).sum(axis=1), 1)


def test_conditioning_reproduces_projective_branches():
    # syndrome in the middle of a GHZ: bit b leaves |b b b>
    branches = post_measurement_branches(projector(GHZ3), 1)
    for b, bits in ((0, "000"), (1, "111")):
        prob, post = branches[b]
        assert prob == pytest.approx(0.5, abs=1e-12)
        assert np.abs(post - projector(ket(bits))).sum() < 1e-10


def test_shot_csv_and_histogram(tmp_path):
    shots = sample_shots(projector(ket("01")), [Q2, Q2], 50, RandomStateSource(13))
    path = tmp_path / "shots.csv"
    shots.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["shot_index", "q1_v", "q1_bit", "q2_v", "q2_bit"]
    assert len(rows) == 51
    h = histogram(shots.voltages[:, 0], bins=10)
    assert sum(h["counts"]) == 50 and len(h["bin_edges"]) == 11
    write_histogram_json(tmp_path / "h.json", {"q1": h})
    assert json.loads((tmp_path / "h.json").read_text())["q1"]["counts"] == h["counts"]
