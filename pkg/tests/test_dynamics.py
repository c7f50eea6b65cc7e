import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wgqed import zeno
from wgqed.dynamics import (
    Channel,
    EffectiveHamiltonian,
    dicke_decay_oracle,
    jump_integral,
    jump_probabilities,
    lindblad_oracle,
    propagate,
    reachable_labels,
    restricted_block,
    trajectory,
)
from wgqed.statespace import EnsembleParams, LabeledBasis, ZenoStepParams

STEPS = ("P1_stepC", "P1_stepE", "P2_stepE", "P3_stepB")


def decay_1d(rate):
    basis = LabeledBasis(("x[e:1]",), "x[e:1]", "x[e:1]")
    return EffectiveHamiltonian(basis, np.array([[-0.5j * rate]]), (Channel("all", rate, np.eye(1)),))


def small_params(n, m, g1d=7.0):
    return EnsembleParams(n, n_detector=min(n, 5), m=m, gamma_1d=g1d, gamma_1d_s=3.0 * g1d)


def test_propagate_identity_at_zero():
    h = zeno.hamiltonian_protocol1_stepC(EnsembleParams(10))
    psi = np.array([0.6, 0.8j, 0])
    np.testing.assert_array_equal(propagate(h, psi, 0.0), psi)


@pytest.mark.parametrize("t", [0.1, 1.0, 3.7])
def test_pure_decay(t):
    psi = propagate(decay_1d(2.0), [1.0], t)
    assert psi[0] == pytest.approx(math.exp(-t))
    assert abs(psi[0]) ** 2 == pytest.approx(math.exp(-2 * t))


def test_gain_is_rejected():
    basis = LabeledBasis(("a",), "a", "a")
    with pytest.raises(ValueError):
        EffectiveHamiltonian(basis, np.array([[0.1j]]))


def test_zero_hamiltonian_is_static():
    basis = LabeledBasis(("a", "b"), "a", "b")
    h = EffectiveHamiltonian(basis, np.zeros((2, 2)))
    tr = trajectory(h, [0.6, 0.8], np.linspace(0, 5, 11))
    np.testing.assert_allclose(tr.populations, np.tile([0.36, 0.64], (11, 1)), atol=1e-15)


def test_p1c_goal_population_at_operating_point():
    p = EnsembleParams(100, gamma_1d=100.0)
    h = zeno.hamiltonian_protocol1_stepC(p)
    psi = propagate(h, h.basis.unit(), zeno.optimal_time("P1_stepC", p))
    assert abs(psi[2]) ** 2 == pytest.approx(0.723, abs=5e-3)


def test_p2_closed_forms():
    p = EnsembleParams(100, gamma_1d=100.0)
    h = zeno.hamiltonian_protocol2_stepE(p)
    t = np.linspace(0, 0.1, 101)
    pops = trajectory(h, h.basis.unit(), t).populations
    an = zeno.analytic_populations("P2_stepE", p, t)
    np.testing.assert_allclose(pops[:, 0], an["initial_analytic"], atol=1e-10)
    np.testing.assert_allclose(pops[:, 1], an["goal_analytic"], atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 400), purcell=st.floats(1.0, 1e4), step=st.sampled_from(STEPS),
       frac=st.floats(0.05, 3.0))
def test_norm_is_non_increasing(n, purcell, step, frac):
    p = EnsembleParams(n, n_detector=max(1, n // 3), gamma_1d=purcell, gamma_1d_s=(n + 1) / 2 * purcell)
    h = zeno.step_hamiltonian(step, p)
    grid = np.linspace(0, frac * zeno.optimal_time(step, p), 60)
    norms = trajectory(h, h.basis.unit(), grid).norms
    assert norms[0] == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(norms) <= 1e-10)


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.0, 2.0), t=st.floats(0.0, 2.0), step=st.sampled_from(STEPS))
def test_semigroup(s, t, step):
    p = EnsembleParams(30, n_detector=10, gamma_1d=50.0, gamma_1d_s=775.0)
    h = zeno.step_hamiltonian(step, p)
    psi0 = h.basis.unit()
    np.testing.assert_allclose(propagate(h, propagate(h, psi0, s), t), propagate(h, psi0, s + t), atol=1e-10)


@pytest.mark.parametrize("step", STEPS)
def test_decay_operator_sum_rule(step):
    p = EnsembleParams(20, n_detector=7, m=2, gamma_1d=30.0, gamma_1d_s=315.0)
    h = zeno.step_hamiltonian(step, p)
    anti = 1j * (h.matrix - h.matrix.conj().T)
    np.testing.assert_allclose(anti, h.total_decay_operator(), atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 300), purcell=st.floats(2.0, 3000.0), step=st.sampled_from(STEPS))
def test_unraveling_completeness(n, purcell, step):
    p = EnsembleParams(n, n_detector=max(1, n // 2), gamma_1d=purcell, gamma_1d_s=(n + 1) / 2 * purcell)
    h = zeno.step_hamiltonian(step, p)
    t = zeno.optimal_time(step, p)
    psi0 = h.basis.unit()
    jumps = jump_probabilities(h, psi0, t)
    total = sum(v for c, v in zip(h.channels, jumps.values()) if c.partition)
    survive = np.linalg.norm(propagate(h, psi0, t)) ** 2
    assert survive + total == pytest.approx(1.0, abs=1e-9)


def test_jump_integral_pure_decay_to_infinity():
    h = decay_1d(1.5)
    tr = trajectory(h, [1.0], np.linspace(0, 1, 11))
    assert jump_integral(tr, np.eye(1), 1.5, to_infinity=True) == pytest.approx(1.0, rel=1e-10)


def test_jump_integral_zero_weights():
    h = decay_1d(1.0)
    tr = trajectory(h, [1.0], np.linspace(0, 1, 5))
    assert jump_integral(tr, np.zeros((1, 1)), 1.0) == 0.0


def test_jump_integral_quadrature_matches_lyapunov_window():
    p = EnsembleParams(100, gamma_1d=100.0)
    h = zeno.hamiltonian_protocol1_stepC(p)
    t = zeno.optimal_time("P1_stepC", p)
    tr = trajectory(h, h.basis.unit(), np.linspace(0, t, 41))
    c = h.channel("leaky_e1_to_c")
    quad = jump_integral(tr, c.weight, c.rate, rtol=1e-10)
    assert quad == pytest.approx(jump_probabilities(h, h.basis.unit(), t)["leaky_e1_to_c"], rel=1e-8)


def test_leaky_jump_near_asymptote():
    p = EnsembleParams(100, gamma_1d=100.0)
    h = zeno.hamiltonian_protocol1_stepC(p)
    t = zeno.optimal_time("P1_stepC", p)
    tr = trajectory(h, h.basis.unit(), np.linspace(0, t, 41))
    c = h.channel("leaky_e1_to_c")
    # the asymptotic form overshoots by about 20% at P = 100; see the ledger
    assert jump_integral(tr, c.weight, c.rate) == pytest.approx(math.pi / 2000, rel=0.25)


def test_jump_integral_rejects_bad_rate():
    h = decay_1d(1.0)
    tr = trajectory(h, [1.0], np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        jump_integral(tr, np.eye(1), 0.0)


def test_trajectory_grid_validation():
    h = decay_1d(1.0)
    with pytest.raises(ValueError):
        trajectory(h, [1.0], [])
    with pytest.raises(ValueError):
        trajectory(h, [1.0], [0.5, 1.0])
    with pytest.raises(ValueError):
        trajectory(h, [1.0], [0.0, 1.0, 1.0])


def test_trajectory_csv(tmp_path):
    h = decay_1d(1.0)
    tr = trajectory(h, [1.0], [0.0, 1.0])
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x[e:1]"
    assert lines[2] == f"1,{math.exp(-1):.12g}"


@pytest.mark.parametrize("step", STEPS)
@pytest.mark.parametrize("n,m", [(2, 0), (4, 0), (4, 2), (5, 1)])
def test_oracle_equivalence(step, n, m):
    p = small_params(n, m)
    om = zeno.optimal_drive(step, p)
    h = zeno.step_hamiltonian(step, p, om)
    grid = np.linspace(0, 2 * zeno.optimal_time(step, p), 25)
    oracle = lindblad_oracle(p, step, grid, omega=om)
    assert oracle.labels == h.basis.labels
    assert oracle.reachable_dim == h.basis.dim
    np.testing.assert_allclose(oracle.populations, trajectory(h, h.basis.unit(), grid).populations, atol=1e-8)


def test_oracle_equivalence_general_zeno():
    z = ZenoStepParams(3, 4, 1, gamma_1d=7.0)
    h = zeno.step_hamiltonian("APPENDIX_ZENO", z)
    grid = np.linspace(0, 1, 20)
    oracle = lindblad_oracle(z, "APPENDIX_ZENO", grid, omega=z.drive)
    np.testing.assert_allclose(oracle.populations, trajectory(h, h.basis.unit(), grid).populations, atol=1e-8)


def test_oracle_refuses_large_ensembles():
    with pytest.raises(ValueError):
        lindblad_oracle(EnsembleParams(50), "P1_stepC", [0.0, 1.0])


def test_restricted_block_is_closed():
    p = small_params(4, 1)
    for step in STEPS:
        _, idx = restricted_block(step, p, 1.0)
        assert len(reachable_labels(step, p)) == len(idx)


def test_single_atom_decay():
    t = np.linspace(0, 2, 9)
    np.testing.assert_allclose(dicke_decay_oracle(1, 3.0, 1.0, t), np.exp(-4.0 * t), atol=1e-12)


def test_superradiant_single_excitation():
    t = np.linspace(0, 1, 9)
    np.testing.assert_allclose(dicke_decay_oracle(4, 3.0, 1.0, t), np.exp(-(4 * 3.0 + 1.0) * t), atol=1e-12)


def test_waveguide_off_factorizes():
    p = small_params(3, 0)
    grid = np.linspace(0, 1, 11)
    oracle = lindblad_oracle(p, "P2_stepE", grid, gamma_1d=0.0)
    # without collective coupling the excitation only decays locally
    np.testing.assert_allclose(oracle.populations[:, 0], np.exp(-grid), atol=1e-10)
    np.testing.assert_allclose(oracle.populations[:, 1], 0.0, atol=1e-12)
