"""Step Hamiltonians and the closed-form figures of merit of the Zeno protocols.

Rates are in units of the free-space decay rate (``gamma_star``); the
Purcell factor is ``gamma_1d / gamma_star``. Each builder attaches its decay
channels to the :class:`~wgqed.dynamics.EffectiveHamiltonian` so jump
probabilities and completeness sums can be computed without re-deriving
the weights.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import (
    Channel,
    EffectiveHamiltonian,
    jump_probabilities,
    lyapunov_integral,
    propagate,
)
from .statespace import (
    EnsembleParams,
    LabeledBasis,
    ZenoStepParams,
    build_basis,
    parse_step,
    protocol3_optimal_ratio,
    zeno_params_for,
)

ZENO_RATIO_LIMIT = 0.3
REFINE_RTOL = 1e-4
E = math.e


def _collective(name: str, rate: float, vec) -> Channel:
    v = np.asarray(vec, dtype=complex)
    return Channel(name, rate, np.outer(v.conj(), v))


def _local(name: str, rate: float, dim: int, index: int, partition: bool = True) -> Channel:
    w = np.zeros((dim, dim), dtype=complex)
    w[index, index] = 1.0
    return Channel(name, rate, w, partition)


# ---------------------------------------------------------------------------
# Hamiltonians


def hamiltonian_protocol1_stepC(params: EnsembleParams, omega: float | None = None) -> EffectiveHamiltonian:
    """Source atom emits into the target ensemble while c-e1 is driven."""
    nm, g, gs = params.n_m, params.gamma_1d, params.gamma_star
    om = optimal_drive("P1_stepC", params) if omega is None else omega
    r = math.sqrt(nm)
    mat = np.array([
        [-0.5j * (g + gs), -0.5j * g * r, 0],
        [-0.5j * g * r, -0.5j * (nm * g + gs), om / 2],
        [0, om / 2, 0],
    ])
    channels = (
        _collective("waveguide", g, [1, r, 0]),
        _local("free_space_source", gs, 3, 0),
        _local("free_space_target", gs, 3, 1),
        _local("leaky_e1_to_c", params.alpha * gs, 3, 1, partition=False),
    )
    return EffectiveHamiltonian(build_basis("P1_stepC", params), mat, channels)


def _zeno_matrix(z: ZenoStepParams, omega: float) -> tuple[np.ndarray, np.ndarray]:
    kk, nb, g, gs = z.k + 1, z.n_b, z.gamma_1d, z.gamma_star
    mat = np.array([
        [-0.5j * (kk * g + gs), -0.5j * math.sqrt(kk * nb) * g, 0],
        [-0.5j * math.sqrt(kk * nb) * g, -0.5j * (nb * g + gs), omega / 2],
        [0, omega / 2, 0],
    ])
    return mat, np.array([math.sqrt(kk), math.sqrt(nb), 0.0])


def hamiltonian_general_zeno(p: ZenoStepParams, *, basis: LabeledBasis | None = None) -> EffectiveHamiltonian:
    """Generic two-ensemble Zeno step, drive ``p.drive`` on ensemble b."""
    mat, v = _zeno_matrix(p, p.drive)
    channels = (
        _collective("waveguide", p.gamma_1d, v),
        _local("free_space_a", p.gamma_star, 3, 0),
        _local("free_space_b", p.gamma_star, 3, 1),
    )
    return EffectiveHamiltonian(basis or build_basis("APPENDIX_ZENO", p), mat, channels)


def hamiltonian_protocol1_stepE(params: EnsembleParams, omega: float | None = None) -> EffectiveHamiltonian:
    """Target hands its e2 excitation to the detector ensemble (k = m)."""
    z = zeno_params_for("P1_stepE", params)
    om = z.optimal_omega if omega is None else omega
    z = ZenoStepParams(z.n_a, z.n_b, z.k, z.gamma_1d, z.gamma_star, om)
    h = hamiltonian_general_zeno(z, basis=build_basis("P1_stepE", params))
    names = {"free_space_a": "free_space_target", "free_space_b": "free_space_detector"}
    channels = tuple(Channel(names.get(c.name, c.name), c.rate, c.weight, c.partition) for c in h.channels)
    return EffectiveHamiltonian(h.basis, h.matrix, channels)


def hamiltonian_protocol2_stepE(params: EnsembleParams) -> EffectiveHamiltonian:
    """Undriven collective exchange of one e2 excitation between target and detector."""
    g, gs = params.gamma_1d, params.gamma_star
    mat = -0.5j * g * np.ones((2, 2)) - 0.5j * gs * np.eye(2)
    channels = (
        _collective("waveguide", g, [1, 1]),
        _local("free_space_target", gs, 2, 0),
        _local("free_space_detector", gs, 2, 1),
    )
    return EffectiveHamiltonian(build_basis("P2_stepE", params), mat, channels)


def hamiltonian_protocol3(params: EnsembleParams, omega_d: float | None = None) -> EffectiveHamiltonian:
    """Single-step transfer with two guided modes (rates gamma_1d and gamma_1d_s)."""
    if params.gamma_1d_s is None:
        raise ValueError("protocol 3 needs gamma_1d_s")
    nm, gg, gsr, gs = params.n_m, params.gamma_1d, params.gamma_1d_s, params.gamma_star
    om = optimal_drive("P3_stepB", params) if omega_d is None else omega_d
    r = math.sqrt(nm)
    mat = 0.5 * np.array([
        [-1j * (gg + gs), -1j * r * gg, 0, 0],
        [-1j * r * gg, -1j * (nm * gg + gsr + gs), -1j * gsr, 0],
        [0, -1j * gsr, -1j * (gsr + gs), om],
        [0, 0, om, 0],
    ])
    channels = (
        _collective("waveguide_g", gg, [1, r, 0, 0]),
        _collective("waveguide_s", gsr, [0, 1, 1, 0]),
        _local("free_space_source", gs, 4, 0),
        _local("free_space_target", gs, 4, 1),
        _local("free_space_detector", gs, 4, 2),
    )
    return EffectiveHamiltonian(build_basis("P3_stepB", params), mat, channels)


def adiabatic_reduction_protocol3(params: EnsembleParams, omega_d: float | None = None) -> EffectiveHamiltonian:
    """Dark-state/goal 2x2 model after eliminating the superradiant states.

    Start from :func:`adiabatic_initial_state`, which carries the overlap of
    the initial state with the dark state.
    """
    nm, g, gs = params.n_m, params.gamma_1d, params.gamma_star
    om = optimal_drive("P3_stepB", params) if omega_d is None else omega_d
    ratio = om / (nm * g)
    if ratio >= ZENO_RATIO_LIMIT:
        warnings.warn(f"drive/collective-rate ratio {ratio:.3g} is outside the Zeno regime", stacklevel=2)
    if params.gamma_1d_s is not None and not math.isclose(
            params.gamma_1d_s / g, protocol3_optimal_ratio(nm), rel_tol=1e-9):
        warnings.warn("reduction assumes the optimal second-mode rate ratio", stacklevel=2)
    c = om / (2 * math.sqrt(nm))
    mat = np.array([[-0.5j * gs, c], [c, -1.5j * om**2 / (nm * g)]])
    full = build_basis("P3_stepB", params)
    basis = LabeledBasis(("dark", full.goal), initial="dark", goal=full.goal)
    w_goal = np.diag([0.0, 1.0]).astype(complex)
    channels = (
        _local("free_space_dark", gs, 2, 0),
        Channel("effective_waveguide", 3 * om**2 / (nm * g), w_goal),
    )
    return EffectiveHamiltonian(basis, mat, channels)


def adiabatic_initial_state(params: EnsembleParams) -> np.ndarray:
    nm = params.n_m
    return np.array([math.sqrt(nm / (nm + 2)), 0.0], dtype=complex)


def step_hamiltonian(step: str, params, omega: float | None = None) -> EffectiveHamiltonian:
    name, _ = parse_step(step)
    if name == "APPENDIX_ZENO" or isinstance(params, ZenoStepParams):
        z = zeno_params_for(step, params)
        if omega is not None:
            z = ZenoStepParams(z.n_a, z.n_b, z.k, z.gamma_1d, z.gamma_star, omega)
        return hamiltonian_general_zeno(z)
    if name == "P1_stepC":
        return hamiltonian_protocol1_stepC(params, omega)
    if name == "P1_stepE":
        return hamiltonian_protocol1_stepE(params, omega)
    if name == "P2_stepE":
        return hamiltonian_protocol2_stepE(params)
    return hamiltonian_protocol3(params, omega)


# ---------------------------------------------------------------------------
# closed-form operating points


def optimal_drive(step: str, params) -> float:
    name, _ = parse_step(step)
    if name == "APPENDIX_ZENO" or isinstance(params, ZenoStepParams):
        return zeno_params_for(step, params).optimal_omega
    g, gs = params.gamma_1d, params.gamma_star
    if name == "P1_stepC":
        return math.sqrt(params.n_m * g * gs)
    if name == "P1_stepE":
        return zeno_params_for(step, params).optimal_omega
    if name == "P2_stepE":
        return 0.0
    return math.sqrt(params.n_m * g * gs / 3)


def optimal_time(step: str, params) -> float:
    name, _ = parse_step(step)
    g, gs = params.gamma_1d, params.gamma_star
    if name == "P2_stepE" and not isinstance(params, ZenoStepParams):
        return 1.0 / g
    if name == "P3_stepB" and not isinstance(params, ZenoStepParams):
        return math.pi * math.sqrt(3) / math.sqrt(g * gs)
    if name == "P1_stepC" and not isinstance(params, ZenoStepParams):
        return math.pi / math.sqrt(g * gs)
    z = zeno_params_for(step, params)
    return math.pi / math.sqrt((z.k + 1) * g * gs)


def analytic_goal_population(step: str, params, t):
    """Zeno-approximation (or exact, for protocol 2) goal population at time t."""
    t = np.asarray(t, dtype=float)
    name, _ = parse_step(step)
    g, gs = params.gamma_1d, params.gamma_star
    if isinstance(params, EnsembleParams) and name == "P2_stepE":
        return 0.25 * np.exp(-gs * t) * (1 - np.exp(-g * t)) ** 2
    if isinstance(params, EnsembleParams) and name == "P3_stepB":
        nm = params.n_m
        return nm / (nm + 2) * np.exp(-gs * t) * np.sin(math.sqrt(g * gs) * t / (2 * math.sqrt(3))) ** 2
    if isinstance(params, EnsembleParams) and name == "P1_stepC":
        nm = params.n_m
        return nm / (nm + 1) * np.exp(-gs * t) * np.sin(math.sqrt(g * gs) * t / 2) ** 2
    z = zeno_params_for(step, params)
    kk = z.k + 1
    return z.n_b / (z.n_b + kk) * np.exp(-gs * t) * np.sin(t * math.sqrt(kk * g * gs) / 2) ** 2


def analytic_populations(step: str, params, t) -> dict[str, np.ndarray]:
    """Closed-form curves available for a step, keyed by a column name."""
    t = np.asarray(t, dtype=float)
    name, _ = parse_step(step)
    out = {"goal_analytic": analytic_goal_population(step, params, t)}
    g, gs = params.gamma_1d, params.gamma_star
    if isinstance(params, EnsembleParams) and name == "P2_stepE":
        out["initial_analytic"] = 0.25 * np.exp(-gs * t) * (1 + np.exp(-g * t)) ** 2
    elif isinstance(params, EnsembleParams) and name == "P3_stepB":
        nm = params.n_m
        out["dark_analytic"] = (nm / (nm + 2) * np.exp(-gs * t)
                                * np.cos(math.sqrt(g * gs) * t / (2 * math.sqrt(3))) ** 2)
    return out


def p3_dark_population(amplitudes: np.ndarray, n_m: int) -> np.ndarray:
    dark = np.array([math.sqrt(n_m), -1.0, 1.0, 0.0]) / math.sqrt(n_m + 2)
    return np.abs(amplitudes @ dark) ** 2


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ReportEntry:
    name: str
    value: float
    formula: str
    kind: str = "value"
    convention: bool = False
    valid: bool = True


@dataclass
class AnalyticReport:
    """Named figures of merit; probabilities and infidelities are range-checked."""

    protocol: str
    entries: dict[str, ReportEntry] = field(default_factory=dict)

    def add(self, name: str, value: float, formula: str, kind: str = "value",
            convention: bool = False, valid: bool = True) -> None:
        value = float(value)
        if kind in ("probability", "infidelity") and not -1e-15 <= value <= 1 + 1e-12:
            raise ValueError(f"{name}={value} is not a probability")
        self.entries[name] = ReportEntry(name, value, formula, kind, convention, valid)

    def __getitem__(self, name: str) -> float:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def rows(self) -> list[tuple]:
        return [(e.name, e.value, e.formula, e.kind, int(e.convention), int(e.valid))
                for e in self.entries.values()]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "value", "formula", "kind", "convention", "valid"])
            for name, val, formula, kind, conv, ok in self.rows():
                w.writerow([name, f"{val:.12g}", formula, kind, conv, ok])


def _p1_stepc(nm: int, purcell: float) -> float:
    return nm / (nm + 1) * math.exp(-math.pi / math.sqrt(purcell))


def _p1_stepe(nd: int, m: int, purcell: float) -> float:
    return nd / (nd + m + 1) * math.exp(-math.pi / math.sqrt((m + 1) * purcell))


def analytics_protocol1(params: EnsembleParams, target_m: int | None = None) -> AnalyticReport:
    """Closed forms for loading one excitation with protocol 1.

    ``target_m`` (default m + 1) sets the horizon of the cumulative entries.
    """
    p, nm, nd, m, a = params.purcell, params.n_m, params.n_detector, params.m, params.alpha
    g, gs = params.gamma_1d, params.gamma_star
    target = m + 1 if target_m is None else target_m
    rep = AnalyticReport("P1")
    om_c = optimal_drive("P1_stepC", params)
    rep.add("optimal_omega_c", om_c, "sqrt(N_m*G1d*G*)", "rate",
            valid=om_c / (nm * g) < ZENO_RATIO_LIMIT)
    rep.add("optimal_time_c", optimal_time("P1_stepC", params), "pi/sqrt(G1d*G*)", "time")
    om_e = optimal_drive("P1_stepE", params)
    rep.add("optimal_omega_e", om_e, "sqrt((N_d+m+1)*G1d*G*)", "rate",
            valid=om_e / (nd * g) < ZENO_RATIO_LIMIT)
    rep.add("optimal_time_e", optimal_time("P1_stepE", params), "pi/sqrt((m+1)*G1d*G*)", "time")
    pc, pe = _p1_stepc(nm, p), _p1_stepe(nd, m, p)
    rep.add("p_c", pc, "N_m/(N_m+1)*exp(-pi/sqrt(P))", "probability")
    rep.add("p_e", pe, "N_d/(N_d+m+1)*exp(-pi/sqrt((m+1)P))", "probability")
    rep.add("p_step", pc * pe, "p_c*p_e", "probability")
    pcs = a * math.pi / (2 * nm * math.sqrt(p))
    rep.add("p_c_star", min(pcs, 1.0), "alpha*pi/(2*N_m*sqrt(P))", "probability",
            valid=nm >= 100 and p >= 100)
    rep.add("p_c_star_window", a / (2 * nm) * (1 - math.exp(-math.pi / math.sqrt(p))),
            "alpha/(2*N_m)*(1-exp(-pi/sqrt(P)))", "probability")
    rep.add("infidelity_step", min(pcs, 1.0), "p_c_star", "infidelity")
    exact_chain = 1.0
    for k in range(target):
        if k >= params.n_target:
            exact_chain = 0.0
            break
        exact_chain *= _p1_stepc(params.n_target - k, p) * _p1_stepe(nd, k, p)
    rep.add("p_cumulative", exact_chain, "prod_k p_c(N-k)*p_e(k)", "probability")
    rep.add("p_cumulative_asymptotic", math.exp(-2 * math.pi * target / math.sqrt(p)),
            "exp(-2*pi*m/sqrt(P))", "probability")
    rep.add("infidelity_cumulative", min(target * pcs, 1.0), "m*p_c_star", "infidelity")
    rep.add("target_m", target, "horizon of cumulative entries", "count")
    return rep


def p2_jump_closed_forms(gamma_1d: float, gamma_star: float, t: float) -> dict[str, float]:
    """Exact integrals over [0, t] of the protocol-2 step-(e) populations."""
    g, gs = gamma_1d, gamma_star

    def decay(rate):
        return (1 - math.exp(-rate * t)) / rate

    psi1 = 0.25 * (decay(gs) + 2 * decay(g + gs) + decay(2 * g + gs))
    psi2 = 0.25 * (decay(gs) - 2 * decay(g + gs) + decay(2 * g + gs))
    sym = decay(2 * g + gs)  # |psi1 + psi2|^2 = exp(-(2G + G*) t)
    return {"int_psi1": psi1, "int_psi2": psi2, "int_collective": sym}


def analytics_protocol2(params: EnsembleParams) -> AnalyticReport:
    p, nm, n, m, a = params.purcell, params.n_m, params.n_target, params.m, params.alpha
    g, gs = params.gamma_1d, params.gamma_star
    rep = AnalyticReport("P2")
    tf = 1.0 / g
    rep.add("optimal_time_e", tf, "1/G1d", "time")
    q_e = (E - 1) ** 2 / (4 * E**2) * math.exp(-1 / p)
    rep.add("q_e", q_e, "(e-1)^2/(4e^2)*exp(-1/P)", "probability")
    rep.add("q_e_linearized", max(0.1 * (1 - 1 / p), 0.0), "0.1*(1-1/P)", "probability", valid=p > 1)
    pc = _p1_stepc(nm, p)
    rep.add("p_c", pc, "N_m/(N_m+1)*exp(-pi/sqrt(P))", "probability")
    q_step = q_e * pc
    rep.add("q_step", q_step, "q_e*p_c", "probability")
    pcs = min(a * math.pi / (2 * nm * math.sqrt(p)), 1.0)
    rep.add("p_c_star", pcs, "alpha*pi/(2*N_m*sqrt(P))", "probability")
    ints = p2_jump_closed_forms(g, gs, tf)
    pes = gs * ints["int_psi1"]
    rep.add("p_e_star", pes, "G* int_0^Tf |psi1|^2", "probability")
    rep.add("p_e_star_asymptotic", min(0.67 / p, 1.0), "0.67/P", "probability")
    rep.add("p_coll", min(g * (ints["int_psi1"] + ints["int_psi2"]), 1.0),
            "G1d int_0^Tf (|psi1|^2+|psi2|^2)", "probability")
    rep.add("p_coll_channel", min(g * ints["int_collective"], 1.0),
            "G1d int_0^Tf |psi1+psi2|^2", "probability")
    ppump = min(1.0 / (nm * p), 1.0)
    rep.add("p_pump_star", ppump, "1/(N_m*P)", "probability", convention=True)
    eps = min((pcs + pes + ppump) * m / n, 1.0)
    rep.add("epsilon_star", eps, "(p_c_star+p_e_star+p_pump_star)*m/N", "infidelity")
    rep.add("infidelity_step", min(pcs + eps / q_step, 1.0), "p_c_star+epsilon_star/q_step", "infidelity")
    rep.add("infidelity_bound", 10 * m * math.exp(-math.pi / math.sqrt(p)) / (n * p),
            "10*m*exp(-pi/sqrt(P))/(N*P)", "value")
    return rep


def analytics_protocol3(params: EnsembleParams) -> AnalyticReport:
    p, nm, n, m = params.purcell, params.n_m, params.n_target, params.m
    g, gs = params.gamma_1d, params.gamma_star
    rep = AnalyticReport("P3")
    om = optimal_drive("P3_stepB", params)
    rep.add("optimal_omega", om, "sqrt(N_m*G1d*G*/3)", "rate", valid=om / (nm * g) < ZENO_RATIO_LIMIT)
    rep.add("optimal_time", optimal_time("P3_stepB", params), "pi*sqrt(3)/sqrt(G1d*G*)", "time")
    rep.add("optimal_rate_ratio", protocol3_optimal_ratio(nm), "(N_m+1)/2", "value")
    if params.gamma_1d_s is not None:
        rep.add("rate_ratio", params.gamma_1d_s / g, "G1d_s/G1d", "value")
    ps = nm / (nm + 2) * math.exp(-math.sqrt(3) * math.pi / math.sqrt(p))
    rep.add("p_step", ps, "N_m/(N_m+2)*exp(-sqrt(3)*pi/sqrt(P))", "probability")
    pstar = min(math.pi * math.sqrt(3) / (2 * nm * math.sqrt(p)), 1.0)
    rep.add("p_star", pstar, "pi*sqrt(3)/(2*N_m*sqrt(P))", "probability", valid=nm >= 100 and p >= 100)
    rep.add("p_star_window", (1 - math.exp(-math.sqrt(3) * math.pi / math.sqrt(p))) / (2 * (nm + 2)),
            "(1-exp(-sqrt(3)*pi/sqrt(P)))/(2*(N_m+2))", "probability")
    ppump = min(1.0 / (nm * p), 1.0)
    rep.add("p_pump_star", ppump, "1/(N_m*P)", "probability", convention=True)
    inf = min((pstar + ppump) * (m / nm) / ps, 1.0)
    rep.add("infidelity_step", inf, "(p_star+p_pump_star)*(m/N_m)/p_step", "infidelity")
    rep.add("infidelity_step_total_n", min((pstar + ppump) * (m / n) / ps, 1.0),
            "(p_star+p_pump_star)*(m/N)/p_step", "infidelity")
    if params.gamma_1d_s is not None:
        ps_s = params.gamma_1d_s / gs
        rep.add("infidelity_scaling_s", m / (nm * math.sqrt(ps_s)) if m else 0.0,
                "m/(N_m*sqrt(P_s)) with P_s=G1d_s/G*", "value", convention=True)
    return rep


def analytics_zeno_errors(p: ZenoStepParams) -> AnalyticReport:
    kk, nb, pur = p.k + 1, p.n_b, p.purcell
    tot = nb + kk
    rep = AnalyticReport("APPENDIX_ZENO")
    x = 1 - math.exp(-math.pi / math.sqrt(kk * pur))
    rep.add("optimal_omega", p.optimal_omega, "sqrt((N_b+k+1)*G1d*G*)", "rate")
    rep.add("optimal_time", math.pi / math.sqrt(kk * p.gamma_1d * p.gamma_star), "pi/sqrt((k+1)*G1d*G*)", "time")
    rep.add("zeno_ratio", p.zeno_ratio, "Omega/(N_b*G1d)", "value", valid=p.in_zeno_regime)
    rep.add("p_success", nb / tot * math.exp(-math.pi / math.sqrt(kk * pur)),
            "N_b/(N_b+k+1)*exp(-pi/sqrt((k+1)P))", "probability")
    rep.add("p_a1_star", 0.5 * x, "1/2*(1-exp(-pi/sqrt((k+1)P)))", "probability")
    rep.add("p_b1_star", min(kk / (2 * nb) * x, 1.0), "(k+1)/(2N_b)*(1-exp(-pi/sqrt((k+1)P)))", "probability")
    tail = math.exp(-math.pi * tot / math.sqrt(kk * pur)) / (tot**2 * pur)
    rep.add("p_a2_star", kk * tail, "(k+1)/((N_b+k+1)^2 P)*exp(-pi(N_b+k+1)/sqrt((k+1)P))", "probability")
    rep.add("p_b2_star", nb * tail, "N_b/((N_b+k+1)^2 P)*exp(-pi(N_b+k+1)/sqrt((k+1)P))", "probability")
    rep.add("tails_negligible", float(nb * tail < 0.01 * min(0.5 * x, kk / (2 * nb) * x)),
            "p_a2+p_b2 << p_a1, p_b1", "flag")
    return rep


def analytics(step_or_protocol: str, params) -> AnalyticReport:
    key = step_or_protocol.upper()
    if key.startswith("P1"):
        return analytics_protocol1(params)
    if key.startswith("P2"):
        return analytics_protocol2(params)
    if key.startswith("P3"):
        return analytics_protocol3(params)
    return analytics_zeno_errors(zeno_params_for(step_or_protocol, params))


# ---------------------------------------------------------------------------
# exact counterparts


@dataclass(frozen=True)
class ExactStep:
    """Exact no-jump figures of a step at the analytic and refined operating points."""

    step: str
    omega: float
    t_analytic: float
    p_analytic_time: float
    t_refined: float
    p_refined: float
    jumps: dict[str, float]
    tails: dict[str, float]


def refine_time(h: EffectiveHamiltonian, psi0, t_guess: float, goal: int) -> tuple[float, float]:
    """Bounded 1-D maximization of the goal population in [t/2, 3t/2]."""
    def neg(t):
        return -abs(propagate(h, psi0, t)[goal]) ** 2

    res = minimize_scalar(neg, bounds=(0.5 * t_guess, 1.5 * t_guess), method="bounded",
                          options={"xatol": REFINE_RTOL * t_guess})
    return float(res.x), float(-res.fun)


def exact_step(step: str, params, omega: float | None = None, *, refine: bool = True) -> ExactStep:
    """Exact goal probability and per-channel jump probabilities of a step.

    ``jumps`` integrate over the drive window [0, T]; ``tails`` are the
    additional jumps after the drive is switched off, evolved to infinity.
    """
    h = step_hamiltonian(step, params, omega)
    om = optimal_drive(step, params) if omega is None else omega
    t_an = optimal_time(step, params)
    psi0 = h.basis.unit()
    goal = h.basis.index(h.basis.goal)
    p_t = abs(propagate(h, psi0, t_an)[goal]) ** 2
    t_ref, p_ref = refine_time(h, psi0, t_an, goal) if refine and om > 0 else (t_an, p_t)
    jumps = jump_probabilities(h, psi0, t_an)
    h_off = step_hamiltonian(step, params, 0.0) if om > 0 else h
    psi_t = propagate(h, psi0, t_an)
    tails = {c.name: c.rate * lyapunov_integral(h_off, psi_t, c.weight) for c in h_off.channels}
    return ExactStep(step, om, t_an, p_t, t_ref, p_ref, jumps, tails)


@dataclass(frozen=True)
class SuppressionResult:
    alpha: float
    effective_drive: float | None
    detuning_ratio: float


def suppression_factor(omega_1: float, delta_a: float, omega_2: float | None = None) -> SuppressionResult:
    """Two-photon suppression alpha = omega_1^2/(4 delta_a^2) of the c-e1 emission."""
    if delta_a == 0:
        raise ValueError("detuning must be non-zero")
    ratio = abs(delta_a) / abs(omega_1) if omega_1 else math.inf
    if ratio < 10:
        warnings.warn(f"detuning only {ratio:.3g} times the drive; far-detuned limit not reached",
                      stacklevel=2)
    alpha = omega_1**2 / (4 * delta_a**2)
    drive = omega_1 * omega_2 / (4 * delta_a) if omega_2 is not None else None
    return SuppressionResult(alpha, drive, ratio)


def required_drive_ratio(alpha: float) -> float:
    """omega_1/delta_a needed for a target suppression alpha."""
    if not 0 <= alpha:
        raise ValueError("alpha must be non-negative")
    return 2 * math.sqrt(alpha)
