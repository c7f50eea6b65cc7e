"""Two-mode probe states and their phase sensitivity.

The phase is imprinted as exp(-i phi G) with a diagonal generator G. Both a
pure-state quantum Fisher information and a method-of-moments (error
propagation) sensitivity are provided, so the Cramer-Rao ordering between
them can be checked directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .merging import TwoModeState, beamsplitter

KINDS = ("DUAL_FOCK", "HOLLAND_BURNETT", "YURKE", "NOON")
GENERATORS = ("N_UP", "N_DOWN", "HALF_DIFFERENCE")
OBSERVABLES = ("J_x", "J_y", "J_z", "N_diff")
FD_STEP = 1e-5


def noon_phases(n: int) -> np.ndarray:
    """Phases with prod_j (x + e^{i phi_j} y) = x^n + y^n."""
    j = np.arange(n)
    return np.angle(-np.exp(1j * np.pi * (2 * j + 1) / n))


def noon_product_form(phases, cutoff: int | None = None) -> TwoModeState:
    """Normalized prod_j (a^dag + e^{i phi_j} b^dag)|0,0>."""
    phases = np.asarray(phases, dtype=float)
    n = len(phases)
    c = n if cutoff is None else cutoff
    amp = np.zeros((c + 1, c + 1), dtype=complex)
    amp[0, 0] = 1.0
    # polynomial coefficients in (a^dag)^u (b^dag)^d, converted to Fock amplitudes at the end
    for ph in phases:
        new = np.zeros_like(amp)
        new[1:, :] += amp[:-1, :]
        new[:, 1:] += np.exp(1j * ph) * amp[:, :-1]
        amp = new
    fact = np.array([math.sqrt(math.factorial(k)) for k in range(c + 1)])
    amp = amp * fact[:, None] * fact[None, :]
    return TwoModeState(amp / np.linalg.norm(amp))


def make_state(kind: str, size: int, phases=None, cutoff: int | None = None) -> TwoModeState:
    """Dual Fock |m,m>, Holland-Burnett, Yurke or NOON states.

    ``size`` is m for the first three kinds and n for NOON. Passing
    ``phases`` to NOON uses the product-of-creation-operators construction.
    """
    kind = kind.upper()
    if size < 1:
        raise ValueError("size must be positive")
    if kind == "DUAL_FOCK":
        return TwoModeState.fock(size, size, cutoff or 2 * size)
    if kind == "HOLLAND_BURNETT":
        return beamsplitter(TwoModeState.fock(size, size, cutoff or 2 * size), 0.5)
    if kind == "YURKE":
        c = cutoff or 2 * size - 1
        return TwoModeState.from_dict({(size, size - 1): 1, (size - 1, size): 1}, c)
    if kind == "NOON":
        if phases is not None:
            if len(phases) != size:
                raise ValueError("NOON(n) needs n phases")
            return noon_product_form(phases, cutoff)
        return TwoModeState.from_dict({(size, 0): 1, (0, size): 1}, cutoff or size)
    raise ValueError(f"unknown state kind {kind!r}")


def yurke_minus(m: int) -> TwoModeState:
    """(|m,m-1> - |m-1,m>)/sqrt(2): the other branch of the heralded preparation."""
    if m < 1:
        raise ValueError("m must be positive")
    return TwoModeState.from_dict({(m, m - 1): 1, (m - 1, m): -1}, 2 * m - 1)


def to_yurke(state: TwoModeState) -> TwoModeState:
    """Map the minus branch onto the Yurke state with exp(-i pi n_up), up to global phase."""
    return state.phase_shift(math.pi, mode=0)


def generator_diagonal(cutoff: int, generator: str) -> np.ndarray:
    n = np.arange(cutoff + 1)
    up, down = n[:, None] * np.ones_like(n)[None, :], np.ones_like(n)[:, None] * n[None, :]
    if generator == "N_UP":
        return up.astype(float)
    if generator == "N_DOWN":
        return down.astype(float)
    if generator == "HALF_DIFFERENCE":
        return (up - down) / 2.0
    raise ValueError(f"unknown generator {generator!r}")


@dataclass(frozen=True, eq=False)
class PhaseProbe:
    state: TwoModeState
    generator: str = "HALF_DIFFERENCE"

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if not self.state.is_number_eigenstate():
            raise ValueError("probe state must have a fixed total photon number")

    @property
    def n_total(self) -> int:
        return next(iter(self.state.total_numbers()))

    def evolved(self, phi: float) -> np.ndarray:
        g = generator_diagonal(self.state.cutoff, self.generator)
        return np.exp(-1j * phi * g) * self.state.amplitudes


def interferometer_probe(state: TwoModeState) -> PhaseProbe:
    """Probe after a first 50:50 splitter (Mach-Zehnder input), J_z phase."""
    c = max(state.cutoff, state.max_total())
    return PhaseProbe(beamsplitter(state.with_cutoff(c), 0.5), "HALF_DIFFERENCE")


@dataclass(frozen=True)
class QFIResult:
    fisher: float

    @property
    def delta_phi(self) -> float:
        return math.inf if self.fisher <= 0 else 1 / math.sqrt(self.fisher)


def quantum_fisher_information(probe: PhaseProbe) -> QFIResult:
    """4 (<d psi|d psi> - |<psi|d psi>|^2) with |d psi> = -i G |psi>."""
    psi = probe.state.amplitudes / math.sqrt(probe.state.norm())
    dpsi = -1j * generator_diagonal(probe.state.cutoff, probe.generator) * psi
    f = 4 * (np.vdot(dpsi, dpsi).real - abs(np.vdot(psi, dpsi)) ** 2)
    return QFIResult(max(float(f), 0.0))


def apply_observable(amp: np.ndarray, observable: str) -> np.ndarray:
    c = amp.shape[0] - 1
    n = np.arange(c + 1)
    if observable in ("J_z", "N_diff"):
        diff = n[:, None] - n[None, :]
        return amp * (diff / 2.0 if observable == "J_z" else diff)
    # a^dag b and b^dag a on the truncated lattice
    sq = np.sqrt(n[1:])
    ab = np.zeros_like(amp)
    ab[1:, :-1] = amp[:-1, 1:] * sq[:, None] * sq[None, :]
    ba = np.zeros_like(amp)
    ba[:-1, 1:] = amp[1:, :-1] * sq[:, None] * sq[None, :]
    if observable == "J_x":
        return 0.5 * (ab + ba)
    if observable == "J_y":
        return -0.5j * (ab - ba)
    raise ValueError(f"unknown observable {observable!r}")


def _moments(amp: np.ndarray, observable: str) -> tuple[float, float]:
    o_psi = apply_observable(amp, observable)
    mean = np.vdot(amp, o_psi).real
    second = np.vdot(o_psi, o_psi).real
    return float(mean), float(second - mean**2)


@dataclass(frozen=True)
class Sensitivity:
    phi: float
    delta_phi: float
    slope: float
    variance: float
    richardson_gap: float


def error_propagation_sensitivity(probe: PhaseProbe, observable: str, phi: float,
                                  step: float = FD_STEP) -> Sensitivity:
    """sqrt(Var O) / |d<O>/dphi| at phi; derivative by central differences.

    The half-step difference is used as a Richardson check; the reported slope
    is the extrapolated one.
    """
    if observable not in OBSERVABLES:
        raise ValueError(f"observable {observable!r} not in catalog {OBSERVABLES}")
    amp = probe.state.amplitudes / math.sqrt(probe.state.norm())
    g = generator_diagonal(amp.shape[0] - 1, probe.generator)

    def mean(x):
        return _moments(np.exp(-1j * x * g) * amp, observable)[0]

    d1 = (mean(phi + step) - mean(phi - step)) / (2 * step)
    d2 = (mean(phi + step / 2) - mean(phi - step / 2)) / step
    slope = (4 * d2 - d1) / 3
    var = _moments(np.exp(-1j * phi * g) * amp, observable)[1]
    gap = abs(d2 - d1)
    if abs(slope) < 1e-9 * max(1.0, math.sqrt(max(var, 0.0))):
        return Sensitivity(phi, math.inf, slope, var, gap)
    return Sensitivity(phi, math.sqrt(max(var, 0.0)) / abs(slope), slope, var, gap)


def min_sensitivity(probe: PhaseProbe, observable: str, phi_range=(-0.3, 0.3),
                    points: int = 121) -> Sensitivity:
    """Best error-propagation sensitivity over a phi window (grid plus local refinement)."""
    grid = np.linspace(*phi_range, points)
    vals = [error_propagation_sensitivity(probe, observable, p) for p in grid]
    i = int(np.argmin([v.delta_phi for v in vals]))
    if not math.isfinite(vals[i].delta_phi):
        return vals[i]
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
    res = minimize_scalar(lambda p: error_propagation_sensitivity(probe, observable, p).delta_phi,
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
    best = error_propagation_sensitivity(probe, observable, float(res.x))
    return best if best.delta_phi < vals[i].delta_phi else vals[i]


@dataclass(frozen=True)
class ScanRow:
    n: int
    phi: float
    delta_phi: float
    qfi_bound: float
    observable: str


def sensitivity_scan(probe: PhaseProbe, observables=OBSERVABLES, phis=None) -> list[ScanRow]:
    phis = np.linspace(-0.3, 0.3, 61) if phis is None else phis
    bound = quantum_fisher_information(probe).delta_phi
    return [ScanRow(probe.n_total, float(p), error_propagation_sensitivity(probe, o, p).delta_phi, bound, o)
            for o in observables for p in phis]


def scan_to_csv(rows: list[ScanRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "phi", "delta_phi", "qfi_bound", "observable"])
        for r in rows:
            w.writerow([r.n, f"{r.phi:.12g}", f"{r.delta_phi:.12g}", f"{r.qfi_bound:.12g}", r.observable])


def loglog_slope(ns, values) -> float:
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])
