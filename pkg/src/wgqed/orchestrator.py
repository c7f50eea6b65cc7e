"""Protocol runs: Monte Carlo heralding, expected costs and two-mode state building.

Protocol 1 restarts from the empty ensemble after any failed herald.
Protocols 2 and 3 keep stored excitations through a repump and build large
numbers with a merge tree: two branches of at least k excitations are
combined on a 50:50 splitter and the merge is kept if the detected count is
small enough. ``ZERO_HERALD`` demands zero detected excitations;
``NUMBER_RESOLVED(beta)`` keeps counts up to beta times the half size.

Every run draws from ``numpy.random.Philox`` seeded with the run's seed, so
records are reproducible bit for bit.
"""

from __future__ import annotations

import csv
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .merging import TwoModeState, count_distribution, repetition_recursion, threshold_plan
from .statespace import EnsembleParams
from .zeno import analytics_protocol1, analytics_protocol2, analytics_protocol3, exact_step

PROTOCOLS = ("P1", "P2", "P3")
RNG_NAME = "Philox"


def parse_policy(policy: str) -> float:
    """Return beta for a merge policy tag (0 for ZERO_HERALD)."""
    if policy == "ZERO_HERALD":
        return 0.0
    m = re.fullmatch(r"NUMBER_RESOLVED\(([0-9.eE+-]+)\)", policy)
    if not m:
        raise ValueError(f"unknown merge policy {policy!r}")
    beta = float(m.group(1))
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return beta


@dataclass(frozen=True)
class ProtocolSpec:
    protocol: str
    params: EnsembleParams
    target_m: int
    merge_policy: str = "ZERO_HERALD"
    two_mode: tuple[complex, complex] | None = None
    forced_p: float | None = None
    exact: bool = False

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if not 1 <= self.target_m < self.params.n_target:
            raise ValueError("need 1 <= target_m < n_target")
        parse_policy(self.merge_policy)
        if self.protocol == "P3" and self.params.gamma_1d_s is None:
            raise ValueError("protocol 3 needs gamma_1d_s")
        if self.forced_p is not None and not 0 < self.forced_p <= 1:
            raise ValueError("forced_p must lie in (0, 1]")
        if self.two_mode is not None:
            a, b = self.two_mode
            if abs(abs(a) ** 2 + abs(b) ** 2 - 1) > 1e-12:
                raise ValueError("two-mode amplitudes must be normalized")

    @property
    def beta(self) -> float:
        return parse_policy(self.merge_policy)


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one run.

    ``attempts`` counts heralded load attempts plus merge attempts. The
    trace has one character per event: L/l successful/failed load,
    M/m successful/failed merge, R restart.
    """

    seed: int
    attempts: int
    heralds: int
    restarts: int
    accumulated_infidelity: float
    final_m: int
    trace: str = ""
    rng: str = RNG_NAME

    def __post_init__(self):
        if self.heralds > self.attempts:
            raise ValueError("more heralds than attempts")
        if not 0 <= self.accumulated_infidelity <= 1:
            raise ValueError("infidelity outside [0, 1]")

    def row(self) -> list[str]:
        return [str(self.seed), str(self.attempts), str(self.heralds), str(self.restarts),
                f"{self.accumulated_infidelity:.12g}", str(self.final_m)]


@dataclass(frozen=True)
class LoadModel:
    """Per-stored-count success probability and infidelity increments of one load."""

    p_success: float
    infidelity_success: float
    infidelity_failure: float


def _clamp(params: EnsembleParams, stored: int) -> EnsembleParams:
    return params.with_(m=min(stored, params.n_target - 1))


@lru_cache(maxsize=4096)
def _exact_p1(params: EnsembleParams) -> float:
    pc = exact_step("P1_stepC", params, refine=False).p_analytic_time
    pe = exact_step("P1_stepE", params, refine=False).p_analytic_time
    return pc * pe


@lru_cache(maxsize=4096)
def load_model(protocol: str, params: EnsembleParams, exact: bool = False) -> LoadModel:
    """Heralding probability and error bookkeeping for one load at ``params.m`` stored."""
    if protocol == "P1":
        rep = analytics_protocol1(params)
        p = _exact_p1(params) if exact else rep["p_step"]
        return LoadModel(p, rep["p_c_star"], 0.0)
    if protocol == "P2":
        rep = analytics_protocol2(params)
        p = rep["q_step"]
        if exact:
            pc = exact_step("P1_stepC", params, refine=False).p_analytic_time
            p = pc * exact_step("P2_stepE", params, refine=False).p_analytic_time
        return LoadModel(p, rep["p_c_star"], rep["epsilon_star"])
    rep = analytics_protocol3(params)
    p = exact_step("P3_stepB", params, refine=False).p_analytic_time if exact else rep["p_step"]
    per_attempt = (rep["p_star"] + rep["p_pump_star"]) * params.m / params.n_m
    return LoadModel(p, per_attempt, per_attempt)


def _model(spec: ProtocolSpec, stored: int) -> LoadModel:
    lm = load_model(spec.protocol, _clamp(spec.params, stored), spec.exact)
    if spec.forced_p is not None:
        return LoadModel(spec.forced_p, lm.infidelity_success, lm.infidelity_failure)
    return lm


@lru_cache(maxsize=None)
def _count_cdf(ka: int, kb: int) -> np.ndarray:
    dist = count_distribution(ka, kb)
    probs = np.zeros(ka + kb + 1)
    for k, p in dist.items():
        probs[k] = float(p)
    return np.cumsum(probs)


def merge_threshold(ka: int, kb: int, m: int, beta: float) -> int:
    return min(math.floor(beta * (ka + kb) / 2 + 1e-12), ka + kb - m)


def branch_size(m: int, beta: float) -> int:
    return max(1, min(m - 1, math.ceil(m / (2 - beta) - 1e-12)))


class _Run:
    def __init__(self, spec: ProtocolSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.rng = np.random.Generator(np.random.Philox(seed))
        self.attempts = self.heralds = self.restarts = 0
        self.infidelity = 0.0
        self.stored = 0
        self.trace: list[str] = []

    def record(self, final_m: int) -> RunRecord:
        return RunRecord(self.seed, self.attempts, self.heralds, self.restarts,
                         min(self.infidelity, 1.0), final_m, "".join(self.trace))

    def run_p1(self) -> RunRecord:
        target = self.spec.target_m
        infid = 0.0
        while self.stored < target:
            lm = _model(self.spec, self.stored)
            self.attempts += 1
            if self.rng.random() < lm.p_success:
                self.heralds += 1
                infid += lm.infidelity_success
                self.stored += 1
                self.trace.append("L")
            else:
                # a failed herald sends the target back to the empty ensemble
                self.restarts += 1
                self.stored = 0
                infid = 0.0
                self.trace.append("lR")
        self.infidelity = infid
        return self.record(self.stored)

    def load(self) -> None:
        lm = _model(self.spec, self.stored)
        tries = int(self.rng.geometric(lm.p_success))
        fails = tries - 1
        self.attempts += tries
        self.heralds += 1
        self.restarts += fails
        # each failed attempt is followed by a repump that costs epsilon on the stored excitations
        self.infidelity += fails * lm.infidelity_failure + lm.infidelity_success
        self.stored += 1
        self.trace.append("l" * fails + "L")

    def build(self, m: int) -> int:
        """Heralded branch with at least m excitations; odd splits can overshoot."""
        if m == 1:
            self.load()
            return 1
        beta = self.spec.beta
        k = branch_size(m, beta)
        while True:
            ka = self.build(k)
            kb = self.build(k)
            self.attempts += 1
            d = int(np.searchsorted(_count_cdf(ka, kb), self.rng.random(), side="right"))
            d = min(d, ka + kb)
            if d <= merge_threshold(ka, kb, m, beta):
                self.heralds += 1
                self.stored -= d
                self.trace.append("M")
                return ka + kb - d
            self.restarts += 1
            self.stored -= ka + kb
            self.trace.append("m")

    def run_tree(self) -> RunRecord:
        got = self.build(self.spec.target_m)
        return self.record(got)


def run_protocol(spec: ProtocolSpec, seed: int) -> RunRecord:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    run = _Run(spec, seed)
    return run.run_p1() if spec.protocol == "P1" else run.run_tree()


def p1_expected_attempts(ps) -> float:
    """Mean attempts to collect len(ps) consecutive successes with restart on failure.

    Success at stage i has probability ps[i]; E = sum_j prod_{i<j} p_i / prod_i p_i.
    """
    ps = list(ps)
    prefix, total = 1.0, 0.0
    for p in ps:
        total += prefix
        prefix *= p
    return total / prefix


@dataclass(frozen=True)
class CostEstimate:
    repetitions: float
    infidelity: float
    extras: dict = field(default_factory=dict)


@lru_cache(maxsize=None)
def branch_size_distribution(m: int, beta: float) -> tuple[tuple[int, float], ...]:
    """Distribution of the number of excitations a successful build(m) returns."""
    if m == 1:
        return ((1, 1.0),)
    k = branch_size(m, beta)
    sub = branch_size_distribution(k, beta)
    out: dict[int, float] = {}
    for ka, pa in sub:
        for kb, pb in sub:
            cdf = _count_cdf(ka, kb)
            pdf = np.diff(cdf, prepend=0.0)
            for d in range(merge_threshold(ka, kb, m, beta) + 1):
                out[ka + kb - d] = out.get(ka + kb - d, 0.0) + pa * pb * pdf[d]
    total = sum(out.values())
    return tuple(sorted((n, p / total) for n, p in out.items()))


@lru_cache(maxsize=None)
def merge_success(m: int, beta: float) -> float:
    k = branch_size(m, beta)
    sub = branch_size_distribution(k, beta)
    return sum(pa * pb * _count_cdf(ka, kb)[merge_threshold(ka, kb, m, beta)]
               for ka, pa in sub for kb, pb in sub)


def tree_expectation(spec: ProtocolSpec) -> tuple[float, float]:
    """Exact mean attempts and infidelity of the merge-tree process.

    Recurses on (m, offset), where the offset is the number of excitations
    already stored elsewhere in the ensemble: loads see it through their
    success probability and repump error. Merge tries are independent, so
    the cost of a successful merge is the per-try cost divided by the
    merge success probability.
    """
    beta = spec.beta
    memo: dict[tuple[int, int], tuple[float, float]] = {}

    def rec(m: int, off: int) -> tuple[float, float]:
        key = (m, off)
        if key in memo:
            return memo[key]
        if m == 1:
            lm = _model(spec, off)
            res = (1 / lm.p_success,
                   lm.infidelity_success + lm.infidelity_failure * (1 / lm.p_success - 1))
        else:
            k = branch_size(m, beta)
            ca, ia = rec(k, off)
            cb = ib = 0.0
            for ka, pa in branch_size_distribution(k, beta):
                c, i = rec(k, off + ka)
                cb += pa * c
                ib += pa * i
            s = merge_success(m, beta)
            res = ((ca + cb + 1) / s, (ia + ib) / s)
        memo[key] = res
        return res

    c, i = rec(spec.target_m, 0)
    return float(c), float(i)


def expected_cost(spec: ProtocolSpec) -> CostEstimate:
    """Analytic expectations of repetitions and accumulated infidelity (no sampling)."""
    p = spec.params
    m = spec.target_m
    if spec.protocol == "P1":
        models = [_model(spec, k) for k in range(m)]
        ps = [lm.p_success for lm in models]
        reps = p1_expected_attempts(ps)
        infid = sum(lm.infidelity_success for lm in models)
        extras = {"p_m": math.prod(ps), "p_m_asymptotic": math.exp(-2 * math.pi * m / math.sqrt(p.purcell)),
                  "infidelity_linear": m * analytics_protocol1(p)["p_c_star"]}
        return CostEstimate(reps, min(infid, 1.0), extras)
    beta = spec.beta
    reps, infid = tree_expectation(spec)
    r1 = 1 / _model(spec, 0).p_success
    extras = {"r1": r1}
    if spec.protocol == "P3":
        extras["infidelity_step"] = analytics_protocol3(p)["infidelity_step"]
    if beta == 0 and m & (m - 1) == 0:
        extras["recursion"] = repetition_recursion(m, r1).expected_repetitions
    if beta > 0 and m >= 2:
        plan = threshold_plan(m, beta, r1)
        extras["threshold_plan"] = plan.expected_repetitions
        extras["threshold_exponent"] = plan.exponent
    return CostEstimate(reps, min(infid, 1.0), extras)


# ---------------------------------------------------------------------------
# campaigns


def _run_chunk(args) -> list[RunRecord]:
    spec, seeds = args
    return [run_protocol(spec, s) for s in seeds]


def run_campaign(spec: ProtocolSpec, seeds, workers: int = 1, keep_trace: bool = False) -> list[RunRecord]:
    """Run every seed; results are returned in seed order regardless of workers."""
    seeds = [int(s) for s in seeds]
    if workers <= 1 or len(seeds) < 2:
        recs = _run_chunk((spec, seeds))
    else:
        n = min(workers, len(seeds))
        chunks = [seeds[i::n] for i in range(n)]
        with ProcessPoolExecutor(max_workers=n) as ex:
            parts = list(ex.map(_run_chunk, [(spec, c) for c in chunks]))
        by_seed = {r.seed: r for part in parts for r in part}
        recs = [by_seed[s] for s in seeds]
    if not keep_trace:
        recs = [RunRecord(r.seed, r.attempts, r.heralds, r.restarts, r.accumulated_infidelity, r.final_m)
                for r in recs]
    return recs


@dataclass(frozen=True)
class CampaignSummary:
    runs: int
    mean_attempts: float
    sem_attempts: float
    mean_infidelity: float
    sem_infidelity: float
    expected_attempts: float
    expected_infidelity: float

    @property
    def z_score(self) -> float:
        return (self.mean_attempts - self.expected_attempts) / self.sem_attempts if self.sem_attempts else 0.0


def summarize(spec: ProtocolSpec, records: list[RunRecord]) -> CampaignSummary:
    att = np.array([r.attempts for r in records], dtype=float)
    inf = np.array([r.accumulated_infidelity for r in records])
    n = len(records)
    sem = lambda x: float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0  # noqa: E731
    cost = expected_cost(spec)
    return CampaignSummary(n, float(att.mean()), sem(att), float(inf.mean()), sem(inf),
                           cost.repetitions, cost.infidelity)


def records_to_csv(records: list[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "attempts", "heralds", "restarts", "infidelity", "final_m"])
        for r in records:
            w.writerow(r.row())


# ---------------------------------------------------------------------------
# two-mode heralded addition


@dataclass(frozen=True)
class TwoModeAddResult:
    """Heralded branches keyed by the measured detector level."""

    branches: dict[str, TwoModeState]
    probabilities: dict[str, float]
    raw: dict[str, TwoModeState]


def two_mode_add(alpha_up: complex, alpha_down: complex, state: TwoModeState,
                 p_success: float = 1.0) -> TwoModeAddResult:
    """Add one excitation in the superposition alpha_up a_up^dag + alpha_down a_down^dag.

    Sequence on (source level, detector level) with the target bosons as
    payload: C_up writes the up component and flags the detector; O1 shelves
    that flag; C_down writes the down component; O2 mixes the two detector
    levels 50:50; only then is the detector read out.
    """
    if abs(abs(alpha_up) ** 2 + abs(alpha_down) ** 2 - 1) > 1e-12:
        raise ValueError("alpha_up, alpha_down must be normalized")
    reg: dict[tuple[str, str], np.ndarray] = {}
    c = state.cutoff + 1
    base = state.with_cutoff(c)
    reg[("e_up", "g")] = alpha_up * base.amplitudes
    reg[("e_down", "g")] = alpha_down * base.amplitudes

    def move(src, dst, mode):
        amp = reg.pop(src, None)
        if amp is None:
            return
        created = TwoModeState(amp, normalized=False).create(mode).with_cutoff(c).amplitudes
        reg[dst] = reg.get(dst, 0) + created

    move(("e_up", "g"), ("g", "c"), 0)            # C_up
    reg[("g", "shelf")] = reg.pop(("g", "c"))     # O1
    move(("e_down", "g"), ("g", "c"), 1)          # C_down
    shelf, flag = reg.pop(("g", "shelf")), reg.pop(("g", "c"))
    out_up = (shelf + flag) / math.sqrt(2)        # O2
    out_down = (shelf - flag) / math.sqrt(2)
    raw = {"c_up": TwoModeState(out_up, normalized=False), "c_down": TwoModeState(out_down, normalized=False)}
    total = sum(s.norm() for s in raw.values())
    probs = {k: p_success * s.norm() / total for k, s in raw.items()}
    branches = {k: s.normalize() for k, s in raw.items() if s.norm() > 0}
    return TwoModeAddResult(branches, probs, raw)


def build_noon(n: int, phases=None) -> TwoModeState:
    """n heralded additions with root phases, keeping the c_up branch each time."""
    from .metrology import noon_phases

    phases = noon_phases(n) if phases is None else phases
    st = TwoModeState.vacuum(1)
    for ph in phases:
        st = two_mode_add(1 / math.sqrt(2), np.exp(1j * ph) / math.sqrt(2), st).branches["c_up"]
    return st


# ---------------------------------------------------------------------------
# repumping


@dataclass(frozen=True)
class EnsembleRecord:
    """Bookkeeping of the target ensemble between attempts."""

    stored: int
    n_target: int
    purcell: float
    stray_excitations: int = 0
    fidelity: float = 1.0


@dataclass(frozen=True)
class RepumpResult:
    state: EnsembleRecord
    emission_probability: float
    overlap_factor: float
    steps: tuple[str, ...]


def repump(ensemble: EnsembleRecord, protocol: str) -> RepumpResult:
    """Return stray excitations to g; report the free-space emission risk.

    The emission probability uses a proportionality constant of 1. Its effect on
    the stored excitations is weighted by the overlap factor m/N.
    """
    m, n = ensemble.stored, ensemble.n_target
    if protocol == "P2":
        steps = ("pi-pulse c-e1 and superradiant decay", "transfer s to c", "pi-pulse c-e1 and superradiant decay")
        p_emit = 1 / ((n - m) * ensemble.purcell)
    elif protocol == "P3":
        steps = ("collective pump s to g",)
        p_emit = 1 / (n * ensemble.purcell)
    else:
        raise ValueError("repumping applies to protocols P2 and P3")
    if m == 0 and ensemble.stray_excitations == 0:
        return RepumpResult(ensemble, 0.0, 0.0, ())
    overlap = m / n
    p_emit = min(p_emit, 1.0)
    cleaned = EnsembleRecord(m, n, ensemble.purcell, 0, ensemble.fidelity * (1 - p_emit * overlap))
    return RepumpResult(cleaned, p_emit, overlap, steps)
