"""No-jump propagation, jump-probability integrals and a symmetric-sector oracle.

All heralded quantities only need the no-jump branch ``exp(-i H_eff t)``.
Small dense matrices are exponentiated by eigendecomposition; near
exceptional points (ill-conditioned eigenvectors) we fall back to
scaling-and-squaring.

The oracle in :func:`lindblad_oracle` is deliberately built another way: the
ensembles are represented by Schwinger bosons (one mode per internal level),
the collective operators are assembled from ladder operators, and the
no-jump part of the master equation is integrated for the density matrix with
an explicit Runge-Kutta scheme.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import quad, simpson, solve_ivp

from .statespace import (
    EnsembleParams,
    LabeledBasis,
    ZenoStepParams,
    build_basis,
    parse_step,
    zeno_params_for,
)

EIG_COND_LIMIT = 1e8


@dataclass(frozen=True)
class Channel:
    """One decay channel: probability density ``rate * <psi|weight|psi>``.

    Sub-channels (``partition=False``) are slices of another channel, e.g. the
    suppressed e1 -> c branch of the target's free-space decay, and are left
    out of completeness sums.
    """

    name: str
    rate: float
    weight: np.ndarray
    partition: bool = True


@dataclass(frozen=True, eq=False)
class EffectiveHamiltonian:
    basis: LabeledBasis
    matrix: np.ndarray
    channels: tuple[Channel, ...] = ()

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.basis.dim, self.basis.dim):
            raise ValueError("matrix shape does not match basis")
        if not np.all(np.isfinite(mat)):
            raise ValueError("non-finite Hamiltonian entries")
        object.__setattr__(self, "matrix", mat)
        if self.decay_spectrum().max() > 1e-10 * max(1.0, np.abs(mat).max()):
            raise ValueError("anti-hermitian part has gain (positive eigenvalue)")

    @property
    def dim(self) -> int:
        return self.basis.dim

    def decay_spectrum(self) -> np.ndarray:
        """Eigenvalues of the anti-hermitian part (H - H^dag)/2i; all <= 0."""
        anti = (self.matrix - self.matrix.conj().T) / 2j
        return np.linalg.eigvalsh(anti)

    def total_decay_operator(self) -> np.ndarray:
        return sum((c.rate * c.weight for c in self.channels if c.partition),
                   np.zeros((self.dim, self.dim), dtype=complex))

    def channel(self, name: str) -> Channel:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)

    @cached_property
    def _eig(self):
        vals, vecs = np.linalg.eig(self.matrix)
        if np.linalg.cond(vecs) > EIG_COND_LIMIT:
            return None
        return vals, vecs, np.linalg.inv(vecs)


def _check_state(h: EffectiveHamiltonian, psi0) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (h.dim,):
        raise ValueError(f"state of shape {psi0.shape} does not fit dimension {h.dim}")
    if not np.all(np.isfinite(psi0)):
        raise ValueError("non-finite state amplitudes")
    return psi0


def propagate(h: EffectiveHamiltonian, psi0, t: float) -> np.ndarray:
    """Return exp(-i H t) psi0."""
    psi0 = _check_state(h, psi0)
    if t < 0 or not math.isfinite(t):
        raise ValueError("time must be finite and non-negative")
    if t == 0:
        return psi0.copy()
    eig = h._eig
    if eig is None:
        return scipy.linalg.expm(-1j * h.matrix * t) @ psi0
    vals, vecs, inv = eig
    return vecs @ (np.exp(-1j * vals * t) * (inv @ psi0))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    amplitudes: np.ndarray
    basis: LabeledBasis
    hamiltonian: EffectiveHamiltonian | None = None
    psi0: np.ndarray | None = None

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def norms(self) -> np.ndarray:
        return self.populations.sum(axis=1)

    def population(self, label: str) -> np.ndarray:
        return self.populations[:, self.basis.index(label)]

    def to_csv(self, path, extra: Mapping[str, np.ndarray] | None = None) -> None:
        cols = {lab: self.populations[:, i] for i, lab in enumerate(self.basis.labels)}
        cols.update(extra or {})
        write_columns(path, self.times, cols)


def write_columns(path, times, columns: Mapping[str, Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *columns])
        for i, t in enumerate(times):
            w.writerow([f"{t:.12g}", *(f"{columns[c][i]:.12g}" for c in columns)])


def trajectory(h: EffectiveHamiltonian, psi0, grid) -> Trajectory:
    psi0 = _check_state(h, psi0)
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    if times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and be strictly increasing")
    eig = h._eig
    if eig is None:
        amps = np.array([propagate(h, psi0, t) for t in times])
    else:
        vals, vecs, inv = eig
        coeff = inv @ psi0
        amps = (np.exp(-1j * np.outer(times, vals)) * coeff) @ vecs.T
        amps[0] = psi0
    return Trajectory(times, amps, h.basis, h, psi0)


def _weight_matrix(weights, dim: int) -> np.ndarray:
    if isinstance(weights, Mapping):
        w = np.zeros((dim, dim), dtype=complex)
        for i, val in weights.items():
            if not 0 <= i < dim:
                raise ValueError(f"weight index {i} outside basis")
            if val < 0:
                raise ValueError("weights must be non-negative")
            w[i, i] = val
        return w
    w = np.asarray(weights, dtype=complex)
    if w.shape != (dim, dim):
        raise ValueError("weight matrix does not match basis")
    return w


def _density(amps: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("ti,ij,tj->t", amps.conj(), w, amps).real


def lyapunov_integral(h: EffectiveHamiltonian, psi, weight: np.ndarray) -> float:
    """Exact int_0^inf <psi(t)|W|psi(t)> dt for a strictly decaying H."""
    hm = h.matrix
    x = scipy.linalg.solve_sylvester(1j * hm.conj().T, -1j * hm, -weight)
    return float((psi.conj() @ x @ psi).real)


def jump_integral(traj: Trajectory, weights, rate: float, *, rtol: float = 1e-8,
                  atol: float = 1e-15, to_infinity: bool = False,
                  tail_hamiltonian: EffectiveHamiltonian | None = None,
                  max_subintervals: int = 500) -> float:
    """``rate * int <W> dt`` over the trajectory window.

    With a Hamiltonian attached the integrand is re-evaluated on demand and
    integrated by adaptive Gauss-Kronrod quadrature (``scipy.integrate.quad``)
    to ``rtol``, or ``atol`` in probability units for channels that barely
    fire; the trajectory grid seeds the breakpoints so fast superradiant
    transients get resolved. Without one, the stored samples are integrated
    by composite Simpson. ``to_infinity`` adds the exact tail beyond the
    window, evolving under ``tail_hamiltonian`` (defaults to the
    trajectory's own Hamiltonian).
    """
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    if rate <= 0:
        raise ValueError("rate must be positive")
    w = _weight_matrix(weights, traj.basis.dim)
    times = traj.times
    if not np.any(w):
        return 0.0
    if times.size == 1:
        value = 0.0
    elif traj.hamiltonian is None:
        value = simpson(_density(traj.amplitudes, w), x=times)
    else:
        h, psi0 = traj.hamiltonian, traj.psi0

        def density(t):
            psi = propagate(h, psi0, t)
            return float((psi.conj() @ w @ psi).real)

        value = 0.0
        for a, b in zip(times[:-1], times[1:]):
            part, err = quad(density, a, b, epsrel=rtol, epsabs=atol / (rate * (times.size - 1)),
                             limit=max_subintervals, full_output=False)
            if not math.isfinite(part) or err > max(rtol * abs(part), atol / (rate * (times.size - 1))) * 10:
                raise RuntimeError("jump integral did not converge")
            value += part
    if to_infinity:
        hk = tail_hamiltonian or traj.hamiltonian
        if hk is None:
            raise ValueError("a Hamiltonian is needed for the infinite tail")
        value += lyapunov_integral(hk, traj.amplitudes[-1], w)
    return rate * value


def jump_probabilities(h: EffectiveHamiltonian, psi0, t_end: float | None = None) -> dict[str, float]:
    """Jump probability per channel over [0, t_end] (or [0, inf) if None)."""
    psi0 = _check_state(h, psi0)
    out = {}
    for c in h.channels:
        if t_end is None:
            out[c.name] = c.rate * lyapunov_integral(h, psi0, c.weight)
        else:
            # int_0^T = int_0^inf - int_T^inf (exact, no quadrature)
            psi_t = propagate(h, psi0, t_end)
            out[c.name] = c.rate * (lyapunov_integral(h, psi0, c.weight)
                                    - lyapunov_integral(h, psi_t, c.weight))
    return out


# ---------------------------------------------------------------------------
# symmetric-sector oracle


@dataclass
class SectorModel:
    """Ensembles in their permutation-symmetric sector.

    ``registers`` maps a register name to ``(n_atoms, levels)``. A collective
    channel is ``(rate, [(register, lower, upper), ...])`` and stands for the
    jump operator sum of ``S_{lower,upper}`` over the listed registers.
    """

    registers: dict[str, tuple[int, tuple[str, ...]]]
    channels: list[tuple[float, list[tuple[str, str, str]]]]
    drives: list[tuple[str, str, str, float]]
    excited: list[tuple[str, str]]
    gamma_star: float
    initial: dict[str, dict[str, int]]
    states: list[dict[str, dict[str, int]]] = field(init=False)

    def __post_init__(self):
        per_reg = []
        for reg, (n, levels) in self.registers.items():
            occs = []
            for combo in itertools.combinations_with_replacement(range(len(levels)), n):
                counts = [0] * len(levels)
                for c in combo:
                    counts[c] += 1
                occs.append({lvl: k for lvl, k in zip(levels, counts) if k})
            per_reg.append([(reg, o) for o in occs])
        self.states = [dict(prod) for prod in itertools.product(*per_reg)]
        self._index = {self._key(s): i for i, s in enumerate(self.states)}

    @staticmethod
    def _key(occ) -> tuple:
        return tuple(sorted((reg, tuple(sorted((l, n) for l, n in lv.items() if n)))
                            for reg, lv in occ.items()))

    def index(self, occ) -> int:
        return self._index[self._key(occ)]

    @property
    def dim(self) -> int:
        return len(self.states)

    def transition(self, reg: str, to: str, frm: str) -> np.ndarray:
        """Matrix of S_{to,frm} = b_to^dag b_frm on one register."""
        op = np.zeros((self.dim, self.dim))
        for j, occ in enumerate(self.states):
            lv = occ[reg]
            n_from = lv.get(frm, 0)
            if n_from == 0:
                continue
            new_lv = dict(lv)
            new_lv[frm] = n_from - 1
            amp = math.sqrt(n_from)
            if to == frm:
                op[j, j] += n_from
                continue
            amp *= math.sqrt(new_lv.get(to, 0) + 1)
            new_lv[to] = new_lv.get(to, 0) + 1
            new = dict(occ)
            new[reg] = new_lv
            op[self.index(new), j] += amp
        return op

    def hamiltonian(self) -> np.ndarray:
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for reg, a, b, omega in self.drives:
            h += 0.5 * omega * (self.transition(reg, a, b) + self.transition(reg, b, a))
        for rate, terms in self.channels:
            lower = sum(self.transition(reg, lo, up) for reg, lo, up in terms)
            h += -0.5j * rate * (lower.T @ lower)
        for reg, lvl in self.excited:
            h += -0.5j * self.gamma_star * self.transition(reg, lvl, lvl)
        return h

    def initial_state(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(self.initial)] = 1.0
        return v


ORACLE_MAX_ATOMS = 6


def sector_model(step: str, params: EnsembleParams | ZenoStepParams, omega: float = 0.0,
                 **rates) -> SectorModel:
    """Symmetric-sector description of a protocol step.

    ``rates`` may override ``gamma_1d``, ``gamma_1d_s`` or ``gamma_star``
    (e.g. ``gamma_1d=0`` to switch the waveguide off).
    """
    name, _ = parse_step(step)
    g1d = rates.get("gamma_1d", params.gamma_1d)
    gst = rates.get("gamma_star", params.gamma_star)
    if name == "APPENDIX_ZENO" or isinstance(params, ZenoStepParams):
        z = zeno_params_for(step, params)
        lv = ("l0", "l1", "l2")
        return SectorModel(
            registers={"a": (z.n_a, lv), "b": (z.n_b, lv)},
            channels=[(g1d, [("a", "l1", "l2"), ("b", "l1", "l2")])],
            drives=[("b", "l0", "l2", omega)],
            excited=[("a", "l2"), ("b", "l2")],
            gamma_star=gst,
            initial={"a": {"l0": z.n_a - z.k - 1, "l1": z.k, "l2": 1}, "b": {"l1": z.n_b}},
        )
    n, m = params.n_target, params.m
    if name == "P1_stepC":
        return SectorModel(
            registers={"src": (1, ("g", "e1", "c")), "tgt": (n, ("g", "e1", "c", "s1"))},
            channels=[(g1d, [("src", "g", "e1"), ("tgt", "g", "e1")])],
            drives=[("tgt", "c", "e1", omega)],
            excited=[("src", "e1"), ("tgt", "e1")],
            gamma_star=gst,
            initial={"src": {"e1": 1}, "tgt": {"g": n - m, "s1": m}},
        )
    if name == "P1_stepE":
        nd = params.n_detector
        return SectorModel(
            registers={"tgt": (n, ("g", "s", "e2")), "det": (nd, ("c", "s", "e2"))},
            channels=[(g1d, [("tgt", "s", "e2"), ("det", "s", "e2")])],
            drives=[("det", "c", "e2", omega)],
            excited=[("tgt", "e2"), ("det", "e2")],
            gamma_star=gst,
            initial={"tgt": {"g": n - m - 1, "s": m, "e2": 1}, "det": {"s": nd}},
        )
    if name == "P2_stepE":
        return SectorModel(
            registers={"tgt": (n, ("g", "e2", "s", "mem")), "det": (1, ("s", "e2"))},
            channels=[(g1d, [("tgt", "s", "e2"), ("det", "s", "e2")])],
            drives=[],
            excited=[("tgt", "e2"), ("det", "e2")],
            gamma_star=gst,
            initial={"tgt": {"g": n - m - 1, "e2": 1, "mem": m}, "det": {"s": 1}},
        )
    # P3_stepB: the source's s level and the detector's g level are detuned away
    g1d_s = rates.get("gamma_1d_s", params.gamma_1d_s)
    if g1d_s is None:
        raise ValueError("protocol 3 needs gamma_1d_s")
    return SectorModel(
        registers={"src": (1, ("g", "e")), "tgt": (n, ("g", "e", "s", "mem")),
                   "det": (1, ("g", "e", "s"))},
        channels=[(g1d, [("src", "g", "e"), ("tgt", "g", "e")]),
                  (g1d_s, [("tgt", "s", "e"), ("det", "s", "e")])],
        drives=[("det", "g", "e", omega)],
        excited=[("src", "e"), ("tgt", "e"), ("det", "e")],
        gamma_star=gst,
        initial={"src": {"e": 1}, "tgt": {"g": n - m, "mem": m}, "det": {"s": 1}},
    )


def connected_component(matrix: np.ndarray, start: int) -> list[int]:
    """Indices reachable from ``start`` through nonzero couplings."""
    adj = (np.abs(matrix) + np.abs(matrix.T)) > 0
    seen = {start}
    frontier = [start]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return sorted(seen)


@dataclass(frozen=True)
class OraclePopulations:
    times: np.ndarray
    labels: tuple[str, ...]
    populations: np.ndarray
    sector_dim: int
    reachable_dim: int


def lindblad_oracle(params: EnsembleParams | ZenoStepParams, step: str, grid, omega: float = 0.0,
                    *, prune: bool = True, rtol: float = 1e-12, atol: float = 1e-14,
                    **rates) -> OraclePopulations:
    """No-jump populations from the symmetric-sector master equation.

    Integrates ``d rho/dt = -i (H rho - rho H^dag)`` (the heralded branch, jump
    terms removed). Individual free-space decay leaves the symmetric sector and
    so only enters through the anti-hermitian part. With ``prune`` the
    integration is restricted to the states reachable from the initial one,
    which is exact for no-jump evolution.
    """
    sizes = ((params.n_a, params.n_b) if isinstance(params, ZenoStepParams)
             else (params.n_target, params.n_detector))
    if max(sizes) > ORACLE_MAX_ATOMS:
        raise ValueError(f"ensemble too large for the desk-scale oracle (>{ORACLE_MAX_ATOMS} atoms)")
    model = sector_model(step, params, omega, **rates)
    basis = build_basis(step, params)
    h = model.hamiltonian()
    start = model.index(model.initial)
    keep = connected_component(h, start) if prune else list(range(model.dim))
    hs = h[np.ix_(keep, keep)]
    d = len(keep)
    rho0 = np.zeros((d, d), dtype=complex)
    pos = keep.index(start)
    rho0[pos, pos] = 1.0

    def rhs(_t, y):
        rho = y.reshape(d, d)
        return (-1j * (hs @ rho - rho @ hs.conj().T)).ravel()

    times = np.asarray(grid, dtype=float)
    if times.size == 0:
        raise ValueError("empty time grid")
    sol = solve_ivp(rhs, (0.0, float(times[-1])), rho0.ravel(), method="DOP853",
                    t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    rhos = sol.y.T.reshape(len(times), d, d)
    idx = []
    for occ in basis.occupations:
        full = {reg: occ.get(reg, {}) for reg in model.registers}
        i = model.index(full)
        idx.append(keep.index(i) if i in keep else None)
    pops = np.zeros((len(times), basis.dim))
    for j, i in enumerate(idx):
        if i is not None:
            pops[:, j] = rhos[:, i, i].real
    return OraclePopulations(times, basis.labels, pops, model.dim, d)


def dicke_decay_oracle(n_atoms: int, gamma_1d: float, gamma_star: float, grid) -> np.ndarray:
    """Excited population of a single symmetric excitation shared by n atoms."""
    model = SectorModel(
        registers={"ens": (n_atoms, ("g", "e"))},
        channels=[(gamma_1d, [("ens", "g", "e")])],
        drives=[],
        excited=[("ens", "e")],
        gamma_star=gamma_star,
        initial={"ens": {"g": n_atoms - 1, "e": 1}},
    )
    h = model.hamiltonian()
    i0 = model.index(model.initial)
    psi = np.array([scipy.linalg.expm(-1j * h * t)[:, i0] for t in grid])
    return np.abs(psi[:, i0]) ** 2


def reachable_labels(step: str, params, omega: float = 1.0) -> list[dict]:
    """Occupations reachable from the initial state inside the full sector."""
    model = sector_model(step, params, omega)
    h = model.hamiltonian()
    return [model.states[i] for i in connected_component(h, model.index(model.initial))]


def restricted_block(step: str, params, omega: float = 0.0, **rates) -> tuple[np.ndarray, list[int]]:
    """Sector Hamiltonian restricted to the basis of :func:`build_basis`.

    Returns the block and the sector indices so callers can check that no
    coupling leaks out of the basis.
    """
    model = sector_model(step, params, omega, **rates)
    h = model.hamiltonian()
    basis = build_basis(step, params)
    idx = [model.index({reg: occ.get(reg, {}) for reg in model.registers})
           for occ in basis.occupations]
    return h[np.ix_(idx, idx)], idx
