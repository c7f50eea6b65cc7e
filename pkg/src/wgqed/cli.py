"""Command-line front end: ``wgqed {dynamics,sweep,plan,metrology,run}``.

Configuration is an INI file with one section per subcommand (see
``DEFAULTS`` for every key and its default). Flags ``--out``, ``--seed`` and
``--workers`` override the file. Exit codes: 0 success, 2 configuration
error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import merging, metrology, orchestrator, zeno
from .dynamics import trajectory
from .statespace import EnsembleParams, parse_step, protocol3_optimal_ratio

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
SUBCOMMANDS = ("dynamics", "sweep", "plan", "metrology", "run")


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


# key -> (kind, default); kinds: int, float, str, bool, ints, floats, grid, optfloat
DEFAULTS: dict[str, dict[str, tuple[str, object]]] = {
    "dynamics": {
        "step": ("str", "P1_stepC"), "n_target": ("int", 100), "n_detector": ("int", 100), "m": ("int", 0),
        "purcell": ("float", 100.0), "alpha": ("float", 1.0), "rate_ratio": ("optfloat", None),
        "omega": ("optfloat", None), "t_max": ("float", 2.0), "points": ("int", 201),
    },
    "sweep": {
        "protocol": ("int", 1), "quantity": ("str", "p_c"), "n_m": ("ints", (100,)),
        "purcell": ("grid", "10, 30, 100, 300, 1000, 10000"), "alpha": ("float", 1.0),
        "n_detector": ("int", 100),
    },
    "plan": {
        "m": ("int", 16), "r1": ("float", 1.0), "beta": ("float", 0.238), "variant": ("str", "total_photon"),
    },
    "metrology": {
        "kinds": ("strs", ("NOON", "HOLLAND_BURNETT", "YURKE", "DUAL_FOCK")), "n": ("ints", (2, 4, 8, 16)),
    },
    "run": {
        "protocol": ("str", "P1"), "n_target": ("int", 100), "n_detector": ("int", 100), "m": ("int", 3),
        "purcell": ("float", 100.0), "alpha": ("float", 1.0), "rate_ratio": ("optfloat", None),
        "policy": ("str", "ZERO_HERALD"), "seeds": ("int", 10000), "forced_p": ("optfloat", None),
        "exact": ("bool", False),
    },
    "general": {"out": ("str", "out.csv"), "seed": ("int", 0), "workers": ("int", 1)},
}

_GRID = re.compile(r"(logspace|linspace)\(\s*([^,]+),\s*([^,]+),\s*(\d+)\s*\)")


def parse_grid(text: str) -> np.ndarray:
    """``logspace(a, b, n)`` (decades, as numpy), ``linspace(a, b, n)`` or a comma list."""
    text = text.strip()
    m = _GRID.fullmatch(text)
    if m:
        kind, a, b, n = m.group(1), float(m.group(2)), float(m.group(3)), int(m.group(4))
        if n < 1:
            raise ConfigError("grid needs at least one point")
        return np.logspace(a, b, n) if kind == "logspace" else np.linspace(a, b, n)
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise ConfigError("empty grid")
    return np.array(vals)


def _convert(section: str, key: str, raw: str):
    if key not in DEFAULTS[section]:
        raise ConfigError(f"unknown key '{key}' in section [{section}]")
    kind = DEFAULTS[section][key][0]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "optfloat":
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "ints":
            vals = tuple(int(v) for v in raw.split(",") if v.strip())
            if not vals:
                raise ValueError("empty list")
            return vals
        if kind == "strs":
            vals = tuple(v.strip() for v in raw.split(",") if v.strip())
            if not vals:
                raise ValueError("empty list")
            return vals
        if kind == "grid":
            parse_grid(raw)
            return raw.strip()
        return raw.strip()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value for '{key}' in [{section}]: {raw!r} ({exc})") from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    """Typed values for one subcommand plus the general section."""

    subcommand: str
    values: dict = field(default_factory=dict)
    general: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        for sec, target in ((self.subcommand, self.values), ("general", self.general)):
            for key, (_, default) in DEFAULTS[sec].items():
                target.setdefault(key, default)
            unknown = set(target) - set(DEFAULTS[sec])
            if unknown:
                raise ConfigError(f"unknown key '{sorted(unknown)[0]}' in section [{sec}]")
        if self.general["workers"] < 1:
            raise ConfigError("workers must be at least 1")

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_ini(cls, text: str, subcommand: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        for sec in cp.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown section [{sec}]")
        values = {k: _convert(subcommand, k, v) for k, v in cp[subcommand].items()} if cp.has_section(subcommand) else {}
        general = {k: _convert("general", k, v) for k, v in cp["general"].items()} if cp.has_section("general") else {}
        return cls(subcommand, values, general)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp[self.subcommand] = {k: _format(v) for k, v in self.values.items()}
        cp["general"] = {k: _format(v) for k, v in self.general.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(x)
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def _params(cfg: ExperimentConfig, protocol3: bool, stored: int | None = None) -> EnsembleParams:
    """Ensemble parameters from a config; ``stored`` overrides the ``m`` key."""
    n, purcell = cfg["n_target"], cfg["purcell"]
    m = cfg["m"] if stored is None else stored
    if n < 1 or purcell <= 0:
        raise ConfigError("n_target and purcell must be positive")
    g1d_s = None
    if protocol3:
        ratio = cfg["rate_ratio"]
        g1d_s = (protocol3_optimal_ratio(n - m) if ratio is None else ratio) * purcell
    try:
        return EnsembleParams(n_target=n, n_detector=cfg["n_detector"], m=m, gamma_1d=purcell,
                              gamma_star=1.0, alpha=cfg["alpha"], gamma_1d_s=g1d_s)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_dynamics(cfg: ExperimentConfig) -> list[list]:
    step = cfg["step"]
    try:
        name, _ = parse_step(step)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["points"] < 2 or cfg["t_max"] <= 0:
        raise ConfigError("time grid is empty: need points >= 2 and t_max > 0")
    params = _params(cfg, name == "P3_stepB")
    h = zeno.step_hamiltonian(step, params, cfg["omega"])
    t_end = cfg["t_max"] * zeno.optimal_time(step, params)
    grid = np.linspace(0.0, t_end, cfg["points"])
    tr = trajectory(h, h.basis.unit(), grid)
    analytic = zeno.analytic_populations(step, params, grid)
    header = ["t", *h.basis.labels, *analytic]
    cols = [tr.populations[:, i] for i in range(h.basis.dim)] + list(analytic.values())
    if name == "P3_stepB":
        header.append("dark")
        cols.append(zeno.p3_dark_population(tr.amplitudes, params.n_m))
    rows = [[t, *(c[i] for c in cols)] for i, t in enumerate(grid)]
    return [header, rows]


QUANTITIES = {1: ("p_c", "p_c_star", "p_e"), 2: ("q_e", "p_e_star", "p_coll"), 3: ("p_step", "p_star")}


def sweep_point(protocol: int, quantity: str, n_m: int, purcell: float, alpha: float, n_detector: int) -> list:
    """One row: n_m, purcell, exact at analytic time, refined exact, analytic, relative deviations."""
    g1d_s = protocol3_optimal_ratio(n_m) * purcell if protocol == 3 else None
    params = EnsembleParams(n_target=n_m, n_detector=n_detector, m=0, gamma_1d=purcell, alpha=alpha,
                            gamma_1d_s=g1d_s)
    if protocol == 1:
        rep = zeno.analytics_protocol1(params)
        if quantity == "p_e":
            ex = zeno.exact_step("P1_stepE", params)
            exact, refined, analytic = ex.p_analytic_time, ex.p_refined, rep["p_e"]
        else:
            ex = zeno.exact_step("P1_stepC", params)
            if quantity == "p_c":
                exact, refined, analytic = ex.p_analytic_time, ex.p_refined, rep["p_c"]
            else:
                exact = ex.jumps["leaky_e1_to_c"]
                refined = exact + ex.tails["leaky_e1_to_c"]
                analytic = rep["p_c_star"]
    elif protocol == 2:
        rep = zeno.analytics_protocol2(params)
        ex = zeno.exact_step("P2_stepE", params, refine=False)
        if quantity == "q_e":
            exact, analytic = ex.p_analytic_time, rep["q_e"]
        elif quantity == "p_e_star":
            exact, analytic = ex.jumps["free_space_target"], rep["p_e_star_asymptotic"]
        else:
            exact = ex.jumps["waveguide"]
            analytic = rep["p_coll_channel"]
        refined = exact
    else:
        rep = zeno.analytics_protocol3(params)
        ex = zeno.exact_step("P3_stepB", params)
        if quantity == "p_step":
            exact, refined, analytic = ex.p_analytic_time, ex.p_refined, rep["p_step"]
        else:
            exact = ex.jumps["free_space_target"]
            refined = exact + ex.tails["free_space_target"]
            analytic = rep["p_star"]
    return [n_m, purcell, exact, refined, analytic, (exact - analytic) / analytic, (refined - analytic) / analytic]


def _sweep_task(args):
    return sweep_point(*args)


def cmd_sweep(cfg: ExperimentConfig) -> list:
    proto, qty = cfg["protocol"], cfg["quantity"]
    if proto not in QUANTITIES or qty not in QUANTITIES[proto]:
        raise ConfigError(f"quantity {qty!r} not available for protocol {proto}; choose from {QUANTITIES.get(proto)}")
    grid = parse_grid(cfg["purcell"])
    if np.any(grid <= 0) or any(n < 1 for n in cfg["n_m"]):
        raise ConfigError("purcell values and n_m must be positive")
    tasks = [(proto, qty, n, float(p), cfg["alpha"], cfg["n_detector"]) for n in cfg["n_m"] for p in grid]
    rows = _map(_sweep_task, tasks, cfg.general["workers"])
    header = ["n_m", "purcell", "exact", "exact_refined", "analytic", "rel_dev", "rel_dev_refined"]
    return [header, rows]


def cmd_plan(cfg: ExperimentConfig) -> tuple[list, list]:
    m = cfg["m"]
    if m < 2 or m & (m - 1):
        raise ConfigError(f"m={m} must be a power of two >= 2")
    if not 0 < cfg["beta"] < 1:
        raise ConfigError("beta must lie in (0, 1)")
    if cfg["variant"] not in merging.S_VARIANTS:
        raise ConfigError(f"variant must be one of {merging.S_VARIANTS}")
    zero = merging.repetition_recursion(m, cfg["r1"])
    thr = merging.threshold_plan(m, cfg["beta"], cfg["r1"], cfg["variant"])
    rows = [[zero.policy, lvl, q, r] for (lvl, q), r in zip(zero.step_log, zero.cumulative)]
    rows += [[thr.policy, lvl, q, r] for (lvl, q), r in zip(thr.step_log, thr.cumulative)]
    rows.append([thr.policy + ":closed_form", m, thr.exponent, thr.expected_repetitions])
    beta_rows = []
    for variant in merging.S_VARIANTS:
        opt = merging.optimize_beta(variant, m=max(m, 256))
        beta_rows.append([variant, opt.beta, opt.s, opt.exponent])
    return [["policy", "level", "q", "cumulative_R"], rows], [["variant", "beta_opt", "s_beta", "exponent"], beta_rows]


CLAIMS = {
    "NOON": lambda n: 1 / n,
    "HOLLAND_BURNETT": lambda n: 1 / math.sqrt(n * (1 + n / 2)),
    "YURKE": lambda n: 2 / n,
    "DUAL_FOCK": lambda n: math.inf,
}


def metrology_row(kind: str, n: int) -> list:
    if kind == "NOON":
        probe = metrology.PhaseProbe(metrology.make_state("NOON", n))
    elif kind == "HOLLAND_BURNETT":
        if n % 2:
            raise ConfigError("Holland-Burnett needs even n")
        probe = metrology.PhaseProbe(metrology.make_state("HOLLAND_BURNETT", n // 2))
    elif kind == "YURKE":
        probe = metrology.interferometer_probe(metrology.make_state("YURKE", max(n // 2, 1)))
    elif kind == "DUAL_FOCK":
        if n % 2:
            raise ConfigError("dual Fock needs even n")
        probe = metrology.PhaseProbe(metrology.make_state("DUAL_FOCK", n // 2), "N_UP")
    else:
        raise ConfigError(f"unknown state kind {kind!r}")
    q = metrology.quantum_fisher_information(probe)
    best, best_obs = math.inf, "none"
    for obs in metrology.OBSERVABLES:
        s = metrology.min_sensitivity(probe, obs)
        if s.delta_phi < best:
            best, best_obs = s.delta_phi, obs
    return [kind, n, probe.n_total, q.fisher, q.delta_phi, best, best_obs, CLAIMS[kind](n)]


def _metrology_task(args):
    return metrology_row(*args)


def cmd_metrology(cfg: ExperimentConfig) -> list:
    if any(n < 1 for n in cfg["n"]):
        raise ConfigError("n values must be positive")
    tasks = [(k.upper(), n) for k in cfg["kinds"] for n in cfg["n"]]
    for k, _ in tasks:
        if k not in CLAIMS:
            raise ConfigError(f"unknown state kind {k!r}")
    rows = _map(_metrology_task, tasks, cfg.general["workers"])
    header = ["kind", "n", "n_total", "qfi", "delta_phi_bound", "best_delta_phi", "best_observable", "claimed"]
    return [header, rows]


def cmd_run(cfg: ExperimentConfig) -> tuple[list, list]:
    proto = cfg["protocol"]
    if proto not in orchestrator.PROTOCOLS:
        raise ConfigError(f"protocol must be one of {orchestrator.PROTOCOLS}")
    if cfg["seeds"] < 1:
        raise ConfigError("seeds must be at least 1")
    base = _params(cfg, proto == "P3", stored=0)
    try:
        spec = orchestrator.ProtocolSpec(proto, base, cfg["m"], cfg["policy"],
                                         forced_p=cfg["forced_p"], exact=cfg["exact"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed0 = cfg.general["seed"]
    recs = orchestrator.run_campaign(spec, range(seed0, seed0 + cfg["seeds"]), cfg.general["workers"])
    s = orchestrator.summarize(spec, recs)
    z = 1.959963984540054
    summary = [["quantity", "mean", "ci_low", "ci_high", "analytic"],
               [["attempts", s.mean_attempts, s.mean_attempts - z * s.sem_attempts,
                 s.mean_attempts + z * s.sem_attempts, s.expected_attempts],
                ["infidelity", s.mean_infidelity, s.mean_infidelity - z * s.sem_infidelity,
                 s.mean_infidelity + z * s.sem_infidelity, s.expected_infidelity]]]
    per_seed = [["seed", "attempts", "heralds", "restarts", "infidelity", "final_m"],
                [[r.seed, r.attempts, r.heralds, r.restarts, r.accumulated_infidelity, r.final_m] for r in recs]]
    return per_seed, summary


def _map(fn, tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}.{tag}{path.suffix or '.csv'}")


def execute(cfg: ExperimentConfig) -> list[Path]:
    """Run a subcommand and write its CSV file(s); returns the written paths."""
    out = Path(cfg.general["out"])
    if not out.parent.exists():
        raise ConfigError(f"output directory {out.parent} does not exist")
    sub = cfg.subcommand
    try:
        if sub == "dynamics":
            tables = [(out, cmd_dynamics(cfg))]
        elif sub == "sweep":
            tables = [(out, cmd_sweep(cfg))]
        elif sub == "plan":
            plan, beta = cmd_plan(cfg)
            tables = [(out, plan), (_sibling(out, "beta"), beta)]
        elif sub == "metrology":
            tables = [(out, cmd_metrology(cfg))]
        else:
            per_seed, summary = cmd_run(cfg)
            tables = [(out, per_seed), (_sibling(out, "summary"), summary)]
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericalError(str(exc)) from exc
    for path, (header, rows) in tables:
        write_csv(path, header, rows)
    return [p for p, _ in tables]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wgqed", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, help="INI file with [<subcommand>] and [general] sections")
    ap.add_argument("--out", help="output CSV path")
    ap.add_argument("--seed", type=int, help="base seed (u64)")
    ap.add_argument("--workers", type=int, help="worker processes")
    return ap


def load_config(args) -> ExperimentConfig:
    text = ""
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    cfg = ExperimentConfig.from_ini(text, args.subcommand)
    for key in ("out", "seed", "workers"):
        val = getattr(args, key)
        if val is not None:
            cfg.general[key] = val
    if cfg.general["seed"] < 0 or cfg.general["seed"] >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.general["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        paths = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
