"""Parameter records and labeled few-state bases for each heralded transfer step.

Every basis state is a product of permutation-symmetric ensemble states, written
as occupation numbers per internal level, e.g. ``tgt[g:99;e1:1]``. The same
occupation dictionaries are used by the symmetric-sector oracle in
:mod:`wgqed.dynamics`, which is what lets the two be compared label by label.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

STEPS = ("P1_stepC", "P1_stepE", "P2_stepE", "P3_stepB", "APPENDIX_ZENO")
ZENO_STEPS = ("P1_stepC", "P1_stepE", "P3_stepB", "APPENDIX_ZENO")

Occupation = Mapping[str, Mapping[str, int]]


@dataclass(frozen=True)
class EnsembleParams:
    """Physical knobs shared by every protocol.

    ``gamma_1d_s`` is the decay rate into the second guided mode used by
    protocol 3; there ``gamma_1d`` plays the role of the first-mode rate.
    """

    n_target: int
    n_detector: int = 1
    m: int = 0
    gamma_1d: float = 100.0
    gamma_star: float = 1.0
    alpha: float = 1.0
    gamma_1d_s: float | None = None

    def __post_init__(self):
        if self.n_target < 1 or self.n_detector < 1:
            raise ValueError("ensemble sizes must be positive")
        if self.m < 0:
            raise ValueError("m must be non-negative")
        if self.m >= self.n_target:
            raise ValueError(f"m={self.m} must be smaller than n_target={self.n_target}")
        if not self.gamma_1d > 0 or not self.gamma_star > 0:
            raise ValueError("decay rates must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.gamma_1d_s is not None and not self.gamma_1d_s > 0:
            raise ValueError("gamma_1d_s must be positive")

    @property
    def purcell(self) -> float:
        return self.gamma_1d / self.gamma_star

    @property
    def n_m(self) -> int:
        """Atoms of the target ensemble still in the ground state."""
        return self.n_target - self.m

    @classmethod
    def from_purcell(cls, n_target: int, purcell: float, **kw) -> "EnsembleParams":
        gamma_star = kw.pop("gamma_star", 1.0)
        return cls(n_target=n_target, gamma_1d=purcell * gamma_star, gamma_star=gamma_star, **kw)

    def with_(self, **changes) -> "EnsembleParams":
        fields = dict(self.__dict__)
        fields.update(changes)
        return EnsembleParams(**fields)


@dataclass(frozen=True)
class ZenoStepParams:
    """Two ensembles a and b of three-level atoms, drive on b's 0-2 transition."""

    n_a: int
    n_b: int
    k: int = 0
    gamma_1d: float = 100.0
    gamma_star: float = 1.0
    omega: float | None = None

    def __post_init__(self):
        if self.n_a < 1 or self.n_b < 1:
            raise ValueError("ensemble sizes must be positive")
        if not 0 <= self.k < self.n_a:
            raise ValueError("need 0 <= k < n_a")
        if not self.gamma_1d > 0 or not self.gamma_star > 0:
            raise ValueError("decay rates must be positive")

    @property
    def purcell(self) -> float:
        return self.gamma_1d / self.gamma_star

    @property
    def optimal_omega(self) -> float:
        return math.sqrt((self.n_b + self.k + 1) * self.gamma_1d * self.gamma_star)

    @property
    def drive(self) -> float:
        return self.optimal_omega if self.omega is None else self.omega

    @property
    def zeno_ratio(self) -> float:
        return self.drive / (self.n_b * self.gamma_1d)

    @property
    def in_zeno_regime(self) -> bool:
        return self.zeno_ratio < 0.3


def protocol3_optimal_ratio(n_m: int) -> float:
    """Optimal second-mode to first-mode decay-rate ratio, (N_m + 1)/2."""
    return (n_m + 1) / 2


def format_label(occupation: Occupation) -> str:
    parts = []
    for reg, levels in occupation.items():
        inner = ";".join(f"{lvl}:{n}" for lvl, n in levels.items() if n)
        parts.append(f"{reg}[{inner}]")
    return "|".join(parts)


_REG = re.compile(r"(\w+)\[([^\]]*)\]")


def parse_label(label: str) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for reg, inner in _REG.findall(label):
        levels = {}
        for item in filter(None, inner.split(";")):
            lvl, n = item.split(":")
            levels[lvl] = int(n)
        out[reg] = levels
    return out


@dataclass(frozen=True)
class LabeledBasis:
    labels: tuple[str, ...]
    initial: str
    goal: str

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("basis labels must be unique")
        if self.initial not in self.labels or self.goal not in self.labels:
            raise ValueError("initial and goal states must belong to the basis")

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def occupations(self) -> list[dict[str, dict[str, int]]]:
        return [parse_label(lab) for lab in self.labels]

    def unit(self, label: str | None = None) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(label or self.initial)] = 1.0
        return v


def parse_step(step: str) -> tuple[str, int | None]:
    """Split ``APPENDIX_ZENO(k)`` into name and k; other tags pass through."""
    m = re.fullmatch(r"APPENDIX_ZENO(?:\((\d+)\))?", step)
    if m:
        return "APPENDIX_ZENO", (int(m.group(1)) if m.group(1) else None)
    if step not in STEPS:
        raise ValueError(f"unknown step tag {step!r}")
    return step, None


def zeno_params_for(step: str, params: EnsembleParams | ZenoStepParams) -> ZenoStepParams:
    """Map a Zeno-type protocol step onto the generic two-ensemble problem."""
    name, k = parse_step(step)
    if isinstance(params, ZenoStepParams):
        return params if k is None else ZenoStepParams(params.n_a, params.n_b, k, params.gamma_1d,
                                                       params.gamma_star, params.omega)
    if name == "P1_stepC":
        # source atom is ensemble a, the ground-state target atoms are ensemble b
        return ZenoStepParams(1, params.n_m, 0, params.gamma_1d, params.gamma_star)
    if name in ("P1_stepE", "APPENDIX_ZENO"):
        return ZenoStepParams(params.n_target, params.n_detector, params.m if k is None else k,
                              params.gamma_1d, params.gamma_star)
    raise ValueError(f"step {step!r} has no generic Zeno form")


def build_basis(step: str, params: EnsembleParams | ZenoStepParams) -> LabeledBasis:
    """Minimal basis closed under the step's no-jump Hamiltonian."""
    name, k = parse_step(step)
    if name == "APPENDIX_ZENO" or isinstance(params, ZenoStepParams):
        z = zeno_params_for(step, params)
        a0 = z.n_a - z.k - 1
        occ = [
            {"a": {"l0": a0, "l1": z.k, "l2": 1}, "b": {"l1": z.n_b}},
            {"a": {"l0": a0, "l1": z.k + 1}, "b": {"l1": z.n_b - 1, "l2": 1}},
            {"a": {"l0": a0, "l1": z.k + 1}, "b": {"l0": 1, "l1": z.n_b - 1}},
        ]
    elif name == "P1_stepC":
        nm, m = params.n_m, params.m
        occ = [
            {"src": {"e1": 1}, "tgt": {"g": nm, "s1": m}},
            {"src": {"g": 1}, "tgt": {"g": nm - 1, "e1": 1, "s1": m}},
            {"src": {"g": 1}, "tgt": {"g": nm - 1, "c": 1, "s1": m}},
        ]
    elif name == "P1_stepE":
        g0, m, nd = params.n_target - params.m - 1, params.m, params.n_detector
        occ = [
            {"tgt": {"g": g0, "s": m, "e2": 1}, "det": {"s": nd}},
            {"tgt": {"g": g0, "s": m + 1}, "det": {"s": nd - 1, "e2": 1}},
            {"tgt": {"g": g0, "s": m + 1}, "det": {"c": 1, "s": nd - 1}},
        ]
    elif name == "P2_stepE":
        g0, m = params.n_m - 1, params.m
        occ = [
            {"tgt": {"g": g0, "e2": 1, "mem": m}, "det": {"s": 1}},
            {"tgt": {"g": g0, "s": 1, "mem": m}, "det": {"e2": 1}},
        ]
    else:  # P3_stepB
        nm, m = params.n_m, params.m
        occ = [
            {"src": {"e": 1}, "tgt": {"g": nm, "mem": m}, "det": {"s": 1}},
            {"src": {"g": 1}, "tgt": {"g": nm - 1, "e": 1, "mem": m}, "det": {"s": 1}},
            {"src": {"g": 1}, "tgt": {"g": nm - 1, "s": 1, "mem": m}, "det": {"e": 1}},
            {"src": {"g": 1}, "tgt": {"g": nm - 1, "s": 1, "mem": m}, "det": {"g": 1}},
        ]
    labels = tuple(format_label(o) for o in occ)
    return LabeledBasis(labels, initial=labels[0], goal=labels[-1])


@dataclass(frozen=True)
class DickeCoefficients:
    """Dark and superradiant combinations over a step basis.

    ``dark`` and ``superradiant`` are lists of unit vectors; ``decay_rows``
    are the collective lowering operators (one row per guided mode) that
    annihilate every dark vector.
    """

    basis: LabeledBasis
    dark: tuple[np.ndarray, ...]
    superradiant: tuple[np.ndarray, ...]
    decay_rows: tuple[np.ndarray, ...]

    def overlap(self, which: str, i: int = 0) -> dict[int, complex]:
        vec = (self.dark if which == "dark" else self.superradiant)[i]
        return {j: complex(c) for j, c in enumerate(vec) if abs(c) > 0}


def collective_decay_rows(step: str, params: EnsembleParams | ZenoStepParams) -> list[np.ndarray]:
    """Matrix elements <f|L|psi_j> of each collective lowering operator L."""
    name, _ = parse_step(step)
    if name == "P2_stepE":
        return [np.array([1.0, 1.0])]
    if name == "P3_stepB":
        nm = params.n_m
        return [np.array([1.0, math.sqrt(nm), 0.0, 0.0]), np.array([0.0, 1.0, 1.0, 0.0])]
    z = zeno_params_for(step, params)
    return [np.array([math.sqrt(z.k + 1), math.sqrt(z.n_b), 0.0])]


def dark_superradiant_decomposition(step: str, params: EnsembleParams | ZenoStepParams) -> DickeCoefficients:
    name, _ = parse_step(step)
    if name not in ZENO_STEPS:
        raise ValueError(f"step {step!r} has no Zeno (dark/superradiant) structure")
    basis = build_basis(step, params)
    rows = collective_decay_rows(step, params)
    if name == "P3_stepB":
        nm = params.n_m
        dark = np.array([math.sqrt(nm), -1.0, 1.0, 0.0]) / math.sqrt(nm + 2)
        # the excited sector (psi1..psi3) minus the dark vector, spanned by the decay rows
        span, _ = np.linalg.qr(np.column_stack(rows))
        supers = tuple(span[:, j] for j in range(span.shape[1]))
    else:
        z = zeno_params_for(step, params)
        tot = z.n_b + z.k + 1
        supers = (np.array([math.sqrt((z.k + 1) / tot), math.sqrt(z.n_b / tot), 0.0]),)
        dark = np.array([math.sqrt(z.n_b / tot), -math.sqrt((z.k + 1) / tot), 0.0])
    return DickeCoefficients(basis, (dark,), supers, tuple(rows))
