"""Two-mode Fock states, beamsplitters and the tree-merging planner.

Convention: a beamsplitter with transmittance T = cos^2(theta) and phase phi
maps a^dag -> t a^dag + i r e^{i phi} b^dag (t = cos theta, r = sin theta).
The 50:50 splitter is T = 1/2, phi = 0. Mode ``up`` is index 0 of the
amplitude array, mode ``down`` index 1; in merging, ``down`` is the mode that
gets counted by the detector.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TwoModeState:
    """Amplitudes ``amplitudes[n_up, n_down]`` with both occupations <= cutoff."""

    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.ndim != 2 or amp.shape[0] != amp.shape[1]:
            raise ValueError("amplitudes must be a square (cutoff+1)^2 array")
        if not np.all(np.isfinite(amp)):
            raise ValueError("non-finite amplitudes")
        object.__setattr__(self, "amplitudes", amp)
        if self.normalized and abs(self.norm() - 1) > NORM_TOL * 10:
            raise ValueError(f"state norm {self.norm():.15g} != 1; pass normalized=False for residues")

    @property
    def cutoff(self) -> int:
        return self.amplitudes.shape[0] - 1

    @classmethod
    def fock(cls, n_up: int, n_down: int, cutoff: int | None = None) -> "TwoModeState":
        c = max(n_up + n_down, 1) if cutoff is None else cutoff
        if n_up < 0 or n_down < 0 or max(n_up, n_down) > c:
            raise ValueError("occupation outside cutoff")
        amp = np.zeros((c + 1, c + 1), dtype=complex)
        amp[n_up, n_down] = 1.0
        return cls(amp)

    @classmethod
    def vacuum(cls, cutoff: int = 1) -> "TwoModeState":
        return cls.fock(0, 0, cutoff)

    @classmethod
    def from_dict(cls, amps: dict[tuple[int, int], complex], cutoff: int | None = None,
                  normalize: bool = True) -> "TwoModeState":
        c = max(max(k) for k in amps) if cutoff is None else cutoff
        arr = np.zeros((c + 1, c + 1), dtype=complex)
        for (u, d), a in amps.items():
            arr[u, d] = a
        if normalize:
            arr = arr / np.linalg.norm(arr)
        return cls(arr)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def normalize(self) -> "TwoModeState":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return TwoModeState(self.amplitudes / math.sqrt(n))

    def with_cutoff(self, cutoff: int) -> "TwoModeState":
        nz = np.argwhere(np.abs(self.amplitudes) > 0)
        if nz.size and nz.max() > cutoff:
            raise ValueError("cutoff would truncate populated states")
        arr = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
        c = min(cutoff, self.cutoff)
        arr[: c + 1, : c + 1] = self.amplitudes[: c + 1, : c + 1]
        return TwoModeState(arr, self.normalized)

    def max_total(self) -> int:
        nz = np.argwhere(np.abs(self.amplitudes) > 0)
        return int(nz.sum(axis=1).max()) if nz.size else 0

    def total_numbers(self) -> set[int]:
        return {int(u + d) for u, d in np.argwhere(np.abs(self.amplitudes) > 0)}

    def is_number_eigenstate(self) -> bool:
        return len(self.total_numbers()) == 1

    def as_dict(self, tol: float = 1e-14) -> dict[tuple[int, int], complex]:
        return {(int(u), int(d)): complex(self.amplitudes[u, d])
                for u, d in np.argwhere(np.abs(self.amplitudes) > tol)}

    def create(self, mode: int) -> "TwoModeState":
        """Apply a^dag (mode 0) or b^dag (mode 1); result is unnormalized."""
        c = self.cutoff
        if self.max_total() + 1 > c:
            src = self.with_cutoff(c + 1)
        else:
            src = self
        a = src.amplitudes
        out = np.zeros_like(a)
        n = np.sqrt(np.arange(1, a.shape[0]))
        if mode == 0:
            out[1:, :] = a[:-1, :] * n[:, None]
        else:
            out[:, 1:] = a[:, :-1] * n[None, :]
        return TwoModeState(out, normalized=False)

    def phase_shift(self, phi: float, mode: int = 0) -> "TwoModeState":
        """exp(-i phi n_mode) as a diagonal phase."""
        n = np.arange(self.cutoff + 1)
        ph = np.exp(-1j * phi * n)
        amp = self.amplitudes * (ph[:, None] if mode == 0 else ph[None, :])
        return TwoModeState(amp, self.normalized)

    def overlap(self, other: "TwoModeState") -> complex:
        c = max(self.cutoff, other.cutoff)
        a, b = self.with_cutoff(c).amplitudes, other.with_cutoff(c).amplitudes
        return complex(np.vdot(a, b))

    def equals_up_to_phase(self, other: "TwoModeState", tol: float = 1e-10) -> bool:
        ov = abs(self.overlap(other))
        return abs(ov - math.sqrt(self.norm() * other.norm())) < tol

    def counting_distribution(self, mode: int = 1) -> np.ndarray:
        """Probability of each photon count in ``mode``."""
        pops = np.abs(self.amplitudes) ** 2
        return pops.sum(axis=1 - mode)

    def project_count(self, count: int, mode: int = 1) -> "TwoModeState":
        """Unnormalized residue after detecting ``count`` photons in ``mode``."""
        amp = np.zeros_like(self.amplitudes)
        if mode == 1:
            amp[:, count] = self.amplitudes[:, count]
        else:
            amp[count, :] = self.amplitudes[count, :]
        return TwoModeState(amp, normalized=False)


def _block_generator(n: int, k01: complex, k10: complex) -> np.ndarray:
    """Second-quantized K = k01 a^dag b + k10 b^dag a on |j, n-j>, j = 0..n."""
    d = np.zeros((n + 1, n + 1), dtype=complex)
    j = np.arange(n)
    d[j + 1, j] = k01 * np.sqrt((j + 1) * (n - j))
    d[j, j + 1] = k10 * np.sqrt((j + 1) * (n - j))
    return d


def beamsplitter(state: TwoModeState, transmittance: float, phase: float = 0.0) -> TwoModeState:
    """Exact beamsplitter acting block by block in total photon number."""
    if not 0 <= transmittance <= 1:
        raise ValueError("transmittance must lie in [0, 1]")
    c = state.cutoff
    if state.max_total() > c:
        raise ValueError(f"cutoff {c} below total photon number {state.max_total()}; raise the cutoff")
    theta = math.acos(math.sqrt(transmittance))
    k01, k10 = theta * np.exp(-1j * phase), theta * np.exp(1j * phase)
    out = np.zeros_like(state.amplitudes)
    for n in state.total_numbers() or {0}:
        j = np.arange(n + 1)
        vec = state.amplitudes[j, n - j]
        u = scipy.linalg.expm(1j * _block_generator(n, k01, k10))
        out[j, n - j] = u @ vec
    return TwoModeState(out, state.normalized)


# ---------------------------------------------------------------------------
# exact rational oracle for the 50:50 splitter


def _ipow(e: int) -> tuple[int, int]:
    return ((1, 0), (0, 1), (-1, 0), (0, -1))[e % 4]


@lru_cache(maxsize=None)
def fock_output_probabilities(p: int, q: int) -> dict[tuple[int, int], Fraction]:
    """Exact probabilities of |j, k> after a 50:50 splitter on |p, q>.

    Expands (a^dag + i b^dag)^p (i a^dag + b^dag)^q binomially; every
    amplitude is a Gaussian integer times sqrt(j! k! / (p! q! 2^(p+q))).
    """
    if p < 0 or q < 0:
        raise ValueError("occupations must be non-negative")
    n = p + q
    out = {}
    norm = math.factorial(p) * math.factorial(q) * 2**n
    for j in range(n + 1):
        re = im = 0
        for a in range(max(0, j - q), min(p, j) + 1):
            c = j - a
            coeff = math.comb(p, a) * math.comb(q, c)
            r, i = _ipow((p - a) + c)
            re += coeff * r
            im += coeff * i
        mag = re * re + im * im
        if mag:
            out[(j, n - j)] = Fraction(mag * math.factorial(j) * math.factorial(n - j), norm)
    return out


def count_distribution(p: int, q: int) -> dict[int, Fraction]:
    """Exact distribution of the photon count in the down (detected) mode."""
    return {k: prob for (_, k), prob in fock_output_probabilities(p, q).items()}


@dataclass(frozen=True)
class DoublingResult:
    k: int
    closed_form: Fraction
    oracle: Fraction | None

    @property
    def value(self) -> float:
        return float(self.closed_form)

    @property
    def stirling(self) -> float:
        return 1 / math.sqrt(math.pi * self.k)


ORACLE_MAX_K = 64


def doubling_closed_form(k: int) -> float:
    """(2k)!/(2^{2k} (k!)^2), evaluated in log space."""
    if k < 1:
        raise ValueError("k must be positive")
    return math.exp(math.lgamma(2 * k + 1) - 2 * math.lgamma(k + 1) - 2 * k * math.log(2))


def doubling_success(k: int) -> DoublingResult:
    """Probability that |k, k> leaves the detected mode empty after a 50:50 splitter."""
    if k < 1:
        raise ValueError("k must be positive")
    closed = Fraction(math.comb(2 * k, k), 4**k)
    oracle = fock_output_probabilities(k, k).get((2 * k, 0), Fraction(0)) if k <= ORACLE_MAX_K else None
    return DoublingResult(k, closed, oracle)


# ---------------------------------------------------------------------------
# merge plans


@dataclass
class MergePlan:
    target_m: int
    policy: str
    expected_repetitions: float
    step_log: list[tuple[float, float]] = field(default_factory=list)
    cumulative: list[float] = field(default_factory=list)
    beta: float | None = None
    exponent: float | None = None

    def __post_init__(self):
        if self.expected_repetitions < 1 - 1e-12:
            raise ValueError("expected repetitions must be at least 1")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "q", "cumulative_R"])
            for (level, q), r in zip(self.step_log, self.cumulative):
                w.writerow([f"{level:.12g}", f"{q:.12g}", f"{r:.12g}"])


def _is_power_of_two(m: int) -> bool:
    return m >= 1 and m & (m - 1) == 0


def repetition_recursion(m: int, r1: float = 1.0) -> MergePlan:
    """R_{2k} = (1 + 2 R_k)/q_k: two k-excitation loads and one merge, retried until success."""
    if not _is_power_of_two(m):
        raise ValueError(f"m={m} is not a power of two")
    if r1 <= 0:
        raise ValueError("r1 must be positive")
    r, k = r1, 1
    log, cum = [(1.0, 1.0)], [r1]
    while k < m:
        q = doubling_closed_form(k)
        r = (1 + 2 * r) / q
        log.append((float(2 * k), q))
        cum.append(r)
        k *= 2
    return MergePlan(m, "ZERO_HERALD", r, log, cum)


def fit_log_curvature(ms, rs) -> tuple[float, float, float]:
    """Least-squares log R = a + b log m + c (log m)^2; returns (a, b, c)."""
    x = np.log(np.asarray(ms, dtype=float))
    y = np.log(np.asarray(rs, dtype=float))
    c, b, a = np.polyfit(x, y, 2)
    return float(a), float(b), float(c)


def zero_herald_reference_exponent(m: int) -> float:
    """log R for the quoted R_m ~ sqrt(m)^{log2 m}."""
    return 0.5 * math.log2(m) * math.log(m)


S_VARIANTS = ("continuum", "total_photon", "discrete")


def threshold_success_continuum(beta: float) -> float:
    """Arcsine integral over the detected count normalized to m: (2/pi) asin(sqrt(beta))."""
    return 2 / math.pi * math.asin(math.sqrt(min(max(beta, 0.0), 1.0)))


def threshold_success_total(beta: float) -> float:
    """Arcsine law over the 2m total photons, threshold beta*m: (2/pi) asin(sqrt(beta/2))."""
    return 2 / math.pi * math.asin(math.sqrt(min(max(beta, 0.0), 2.0) / 2))


@lru_cache(maxsize=None)
def _central_pair_probs(m: int) -> tuple[Fraction, ...]:
    """P(detected count = 2j) for |m, m> at 50:50: C(2j,j) C(2m-2j,m-j)/4^m."""
    return tuple(Fraction(math.comb(2 * j, j) * math.comb(2 * (m - j), m - j), 4**m) for j in range(m + 1))


def threshold_success_discrete(m: int, beta: float, oracle: bool = False) -> Fraction:
    """Exact P(detected count <= beta*m) for |m, m>.

    With ``oracle`` the distribution comes from the binomial expansion of the
    splitter; otherwise from the closed central-binomial product.
    """
    limit = math.floor(beta * m + 1e-12)
    if oracle:
        dist = count_distribution(m, m)
        return sum((p for k, p in dist.items() if k <= limit), Fraction(0))
    return sum(_central_pair_probs(m)[: limit // 2 + 1], Fraction(0))


@dataclass(frozen=True)
class ThresholdResult:
    m: int
    beta: float
    continuum: float
    total_photon: float
    discrete: float

    def variant(self, name: str) -> float:
        return getattr(self, name)


def threshold_success(m: int, beta: float) -> ThresholdResult:
    if m < 2:
        raise ValueError("m must be at least 2")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return ThresholdResult(m, beta, threshold_success_continuum(beta), threshold_success_total(beta),
                           float(threshold_success_discrete(m, beta)))


def threshold_exponent(beta: float, s: float) -> float:
    """Polynomial degree log_{2-beta}(2/s) of R_m under the threshold policy."""
    if s <= 0:
        return math.inf
    return math.log(2 / s) / math.log(2 - beta)


def s_of(variant: str, beta: float, m: int = 256) -> float:
    if variant == "continuum":
        return threshold_success_continuum(beta)
    if variant == "total_photon":
        return threshold_success_total(beta)
    if variant == "discrete":
        return float(threshold_success_discrete(m, beta))
    raise ValueError(f"unknown s_beta variant {variant!r}")


@dataclass(frozen=True)
class BetaOptimum:
    variant: str
    beta: float
    exponent: float
    s: float


def optimize_beta(variant: str = "total_photon", m: int = 256,
                  bounds: tuple[float, float] = (0.01, 0.9)) -> BetaOptimum:
    """Minimize log_{2-beta}(2/s_beta) over beta (bounded Brent search).

    The discrete variant is piecewise constant in beta, so it is minimized on
    the grid of attainable thresholds (even counts 2j/m) instead.
    """
    if variant == "discrete":
        probs = np.cumsum([float(p) for p in _central_pair_probs(m)])
        best = None
        for j in range(m + 1):
            beta = 2 * j / m
            if not bounds[0] <= beta <= bounds[1]:
                continue
            e = threshold_exponent(beta, probs[j])
            if best is None or e < best[1]:
                best = (beta, e, probs[j])
        if best is None:
            raise ValueError("no attainable threshold within bounds")
        return BetaOptimum(variant, *best)
    res = minimize_scalar(lambda b: threshold_exponent(b, s_of(variant, b)), bounds=bounds,
                          method="bounded", options={"xatol": 1e-8})
    return BetaOptimum(variant, float(res.x), float(res.fun), s_of(variant, float(res.x)))


def threshold_plan(m: int, beta: float, r1: float = 1.0, variant: str = "total_photon") -> MergePlan:
    """Expected repetitions under the number-resolved policy.

    Each merge multiplies the stored number by (2 - beta) and succeeds with
    s_beta, so R -> (1 + 2R)/s_beta per level. Solving that affine map over
    log_{2-beta} m levels gives R_m = (r1 + c) m^e - c with c = 1/(2 - s) and
    e = log_{2-beta}(2/s).
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    s = s_of(variant, beta, m)
    e = threshold_exponent(beta, s)
    c = 1 / (2 - s)
    levels = math.log(m) / math.log(2 - beta)
    log, cum = [(1.0, 1.0)], [r1]
    r = r1
    for i in range(1, math.ceil(levels - 1e-12) + 1):
        r = (1 + 2 * r) / s
        log.append((min((2 - beta) ** i, m), s))
        cum.append(r)
    r_m = (r1 + c) * m**e - c
    return MergePlan(m, f"NUMBER_RESOLVED({beta:g})", r_m, log, cum, beta, e)


def noon_doubling_success(n: int) -> tuple[float, float]:
    """Closed form 2/(16 4^{n-1}) C(2n-2, n-1) and its asymptote 1/(8 sqrt(pi (n-1)))."""
    if n < 2:
        raise ValueError("n must be at least 2")
    val = float(Fraction(2 * math.comb(2 * n - 2, n - 1), 16 * 4 ** (n - 1)))
    return val, 1 / (8 * math.sqrt(math.pi * (n - 1)))


def distribution_to_csv(dist: dict[int, Fraction | float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["count", "probability"])
        for k in sorted(dist):
            w.writerow([k, f"{float(dist[k]):.12g}"])
