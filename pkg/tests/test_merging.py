import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from wgqed import merging
from wgqed.merging import TwoModeState, beamsplitter


def full_space_beamsplitter(state: TwoModeState, transmittance: float, phase: float) -> np.ndarray:
    """Reference: exp(i theta (e^{-i phase} a^dag b + h.c.)) on the truncated product space."""
    c = state.cutoff
    a1 = np.diag(np.sqrt(np.arange(1, c + 1)), 1)
    eye = np.eye(c + 1)
    a, b = np.kron(a1, eye), np.kron(eye, a1)
    theta = math.acos(math.sqrt(transmittance))
    gen = theta * (np.exp(-1j * phase) * a.conj().T @ b + np.exp(1j * phase) * b.conj().T @ a)
    return (scipy.linalg.expm(1j * gen) @ state.amplitudes.ravel()).reshape(c + 1, c + 1)


def random_state(seed: int, n_max: int, cutoff: int) -> TwoModeState:
    rng = np.random.default_rng(seed)
    amp = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    for u in range(cutoff + 1):
        for d in range(cutoff + 1 - u):
            if u + d <= n_max:
                amp[u, d] = rng.normal() + 1j * rng.normal()
    return TwoModeState(amp / np.linalg.norm(amp))


def test_single_photon_splits_evenly():
    out = beamsplitter(TwoModeState.fock(1, 0), 0.5).as_dict()
    assert set(out) == {(1, 0), (0, 1)}
    assert all(abs(abs(v) ** 2 - 0.5) < 1e-14 for v in out.values())


def test_hong_ou_mandel():
    out = beamsplitter(TwoModeState.fock(1, 1, 2), 0.5)
    assert abs(out.amplitudes[1, 1]) < 1e-15
    assert abs(out.amplitudes[2, 0]) ** 2 == pytest.approx(0.5)
    assert abs(out.amplitudes[0, 2]) ** 2 == pytest.approx(0.5)


def test_full_transmission_is_identity():
    st_ = random_state(1, 4, 4)
    np.testing.assert_allclose(beamsplitter(st_, 1.0).amplitudes, st_.amplitudes, atol=1e-15)


def test_cutoff_guard():
    amp = np.zeros((3, 3), dtype=complex)
    amp[2, 2] = 1
    with pytest.raises(ValueError):
        beamsplitter(TwoModeState(amp), 0.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_max=st.integers(0, 6), t=st.floats(0.0, 1.0),
       phase=st.floats(-math.pi, math.pi))
def test_matches_full_space_unitary(seed, n_max, t, phase):
    state = random_state(seed, n_max, 6)
    out = beamsplitter(state, t, phase)
    np.testing.assert_allclose(out.amplitudes, full_space_beamsplitter(state, t, phase), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_max=st.integers(0, 8), t=st.floats(0.0, 1.0),
       phase=st.floats(-math.pi, math.pi))
def test_unitary_and_number_conserving(seed, n_max, t, phase):
    state = random_state(seed, n_max, 8)
    out = beamsplitter(state, t, phase)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    n = np.add.outer(np.arange(9), np.arange(9))
    for total in range(n_max + 1):
        before = np.sum(np.abs(state.amplitudes[n == total]) ** 2)
        after = np.sum(np.abs(out.amplitudes[n == total]) ** 2)
        assert after == pytest.approx(before, abs=1e-12)


@pytest.mark.parametrize("p,q", [(1, 1), (2, 2), (3, 1), (4, 4), (5, 2)])
def test_rational_oracle_matches_splitter(p, q):
    out = beamsplitter(TwoModeState.fock(p, q), 0.5)
    probs = merging.fock_output_probabilities(p, q)
    assert sum(probs.values()) == 1
    for (j, k), pr in probs.items():
        assert abs(out.amplitudes[j, k]) ** 2 == pytest.approx(float(pr), abs=1e-12)


@pytest.mark.parametrize("k", range(1, 9))
def test_dual_fock_odd_counts_vanish(k):
    dist = merging.count_distribution(k, k)
    assert all(c % 2 == 0 for c in dist)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 10])
def test_doubling_closed_form_equals_oracle(k):
    res = merging.doubling_success(k)
    assert res.oracle == res.closed_form
    assert res.value == pytest.approx(merging.doubling_closed_form(k), rel=1e-12)


def test_doubling_small_values():
    assert merging.doubling_success(1).closed_form == Fraction(1, 2)
    assert merging.doubling_success(2).closed_form == Fraction(3, 8)


def test_doubling_stirling():
    res = merging.doubling_success(64)
    assert res.value == pytest.approx(1 / math.sqrt(64 * math.pi), rel=0.01)


def test_repetition_recursion_values():
    assert merging.repetition_recursion(2).expected_repetitions == pytest.approx(6.0)
    assert merging.repetition_recursion(4).expected_repetitions == pytest.approx(104 / 3)
    with pytest.raises(ValueError):
        merging.repetition_recursion(3)


def test_repetitions_superpolynomial():
    ms = [2**j for j in range(1, 11)]
    rs = [merging.repetition_recursion(m).expected_repetitions for m in ms]
    assert np.all(np.diff(rs) > 0)
    _, _, curvature = merging.fit_log_curvature(ms, rs)
    assert curvature > 0


def test_continuum_threshold_symmetry():
    assert merging.threshold_success_continuum(0.5) == pytest.approx(0.5, abs=1e-15)
    assert merging.threshold_success_continuum(1.0) == 1.0


def test_discrete_threshold_against_oracle():
    exact = merging.threshold_success_discrete(8, 0.25, oracle=True)
    assert exact == merging.threshold_success_discrete(8, 0.25)
    dist = merging.count_distribution(8, 8)
    assert exact == dist[0] + dist[2]


@settings(max_examples=30, deadline=None)
@given(m=st.integers(2, 40), beta=st.floats(0.01, 0.99))
def test_discrete_threshold_oracle_property(m, beta):
    assert merging.threshold_success_discrete(m, beta) == merging.threshold_success_discrete(m, beta, oracle=True)


def test_exponent_at_quoted_point():
    assert merging.threshold_exponent(0.5, 1 / 3) == pytest.approx(math.log(6) / math.log(1.5), rel=1e-12)
    assert merging.threshold_exponent(0.5, 1 / 3) == pytest.approx(4.42, abs=5e-3)


@pytest.mark.parametrize("variant", ["continuum", "total_photon"])
def test_small_beta_degrades(variant):
    betas = [1e-6, 1e-4, 1e-2, 0.1]
    exps = [merging.threshold_exponent(b, merging.s_of(variant, b)) for b in betas]
    assert np.all(np.diff(exps) < 0)
    assert exps[0] > 2 * exps[-1]


@pytest.mark.parametrize("variant", merging.S_VARIANTS)
def test_beta_optimum_is_interior(variant):
    opt = merging.optimize_beta(variant)
    assert 0.05 < opt.beta < 0.6
    assert opt.exponent < merging.threshold_exponent(0.5, merging.s_of(variant, 0.5))


def test_threshold_plan_closed_form_tracks_recursion():
    plan = merging.threshold_plan(1024, 0.238)
    assert plan.cumulative == sorted(plan.cumulative)
    assert plan.expected_repetitions >= 1
    # the closed form sits on the power law; check its log-log slope
    ms = np.array([64, 256, 1024])
    rs = [merging.threshold_plan(int(m), 0.238).expected_repetitions for m in ms]
    slope = np.polyfit(np.log(ms), np.log(rs), 1)[0]
    assert slope == pytest.approx(plan.exponent, rel=0.01)


@settings(max_examples=20, deadline=None)
@given(j=st.integers(1, 9), beta=st.floats(0.05, 0.95))
def test_plans_increase_with_target(j, beta):
    lo, hi = 2**j, 2 ** (j + 1)
    assert merging.repetition_recursion(hi).expected_repetitions > merging.repetition_recursion(lo).expected_repetitions
    assert merging.threshold_plan(hi, beta).expected_repetitions > merging.threshold_plan(lo, beta).expected_repetitions


@pytest.mark.parametrize("n,value,asymptote", [(2, 1 / 16, 1 / (8 * math.sqrt(math.pi))),
                                                (3, 6 / 128, 1 / (8 * math.sqrt(2 * math.pi)))])
def test_noon_doubling(n, value, asymptote):
    v, a = merging.noon_doubling_success(n)
    assert v == pytest.approx(value, rel=1e-12)
    assert a == pytest.approx(asymptote, rel=1e-12)


def test_state_validation():
    with pytest.raises(ValueError):
        TwoModeState(np.ones((2, 2)))
    residue = TwoModeState(np.ones((2, 2)), normalized=False)
    assert residue.normalize().norm() == pytest.approx(1.0)


def test_distribution_csv(tmp_path):
    merging.distribution_to_csv(merging.count_distribution(1, 1), tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines() == ["count,probability", "0,0.5", "2,0.5"]
