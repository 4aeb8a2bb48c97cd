"""Configuration-driven experiment runner with machine-readable reports.

An experiment executes one run per (algorithm, T, eta, seed), writes a
full JSON trace and a CSV per run, and assembles a deterministic summary
with a bound check wherever a theorem step size was used. Nothing here is
interactive: inputs and outputs are files, and reruns of the same config
are byte-identical (wall time lives only in the per-run traces).
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .games import GameGenSpec, PreferenceGame, duality_gap, make_game
from .optim import FitConfig, FitError
from .solvers import (
    RunLog,
    SolverConfig,
    kl_diameter,
    run_solver,
    theorem_gap_bound,
)
from .stochastic import onpo_stochastic_run

# default 1/eta grid for sweeps
DEFAULT_INV_ETA_GRID = (0.1, 0.05, 0.02, 0.01, 0.005)

BOUND_TOL = 1e-12

EXACT_ALGORITHMS = ("omd", "onpo", "nash_md", "sppo", "online_ipo")
ALL_ALGORITHMS = EXACT_ALGORITHMS + ("onpo_stochastic",)


class ConfigError(ValueError):
    """An experiment config field is missing or invalid."""


@dataclass
class StochasticOptions:
    n_per_iter: int = 4096
    mode: str = "pair"
    k: int = 8
    fit: FitConfig = field(default_factory=FitConfig)

    def to_json_dict(self):
        return {
            "n_per_iter": self.n_per_iter,
            "mode": self.mode,
            "k": self.k,
            "fit": self.fit.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d):
        d = dict(d)
        if "fit" in d:
            d["fit"] = FitConfig.from_json_dict(d["fit"])
        return cls(**d)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment from disk.

    game: either an inline GameGenSpec dict (its seed field is replaced by
    each run seed) or {"file": path} pointing at a serialized game.
    eta: a positive number, "theorem", or {"inv_grid": [...]} of 1/eta values.
    """

    game: dict
    algorithms: list
    T_values: list
    seeds: list
    eta: object = "theorem"
    out_dir: str = "reports"
    tau: float = None
    ref_policy: list = None
    stochastic: StochasticOptions = field(default_factory=StochasticOptions)

    def validate(self):
        if not self.algorithms:
            raise ConfigError("algorithms: list must be nonempty")
        for a in self.algorithms:
            if a not in ALL_ALGORITHMS:
                raise ConfigError(f"algorithms: unknown algorithm {a!r}")
        if not self.seeds:
            raise ConfigError("seeds: list must be nonempty")
        if not self.T_values or any(t < 1 for t in self.T_values):
            raise ConfigError("T_values: need a nonempty list of T >= 1")
        if isinstance(self.eta, dict):
            grid = self.eta.get("inv_grid", [])
            if not grid:
                raise ConfigError("eta.inv_grid: grid must be nonempty")
            if any(not v > 0 for v in grid):
                raise ConfigError("eta.inv_grid: grid values must be positive")
        elif isinstance(self.eta, str):
            if self.eta != "theorem":
                raise ConfigError(f"eta: expected a number, 'theorem' or inv_grid, got {self.eta!r}")
            bad = [a for a in self.algorithms if a not in ("omd", "onpo")]
            if bad:
                raise ConfigError(f"eta: 'theorem' is only defined for omd/onpo, not {bad}")
        elif not self.eta > 0:
            raise ConfigError(f"eta: must be positive, got {self.eta}")
        for a in self.algorithms:
            if a in ("nash_md", "online_ipo"):
                if self.tau is None or not self.tau > 0:
                    raise ConfigError(f"tau: {a} requires tau > 0")
                if self.ref_policy is None:
                    raise ConfigError(f"ref_policy: {a} requires a reference policy")
        if "onpo_stochastic" in self.algorithms:
            if self.stochastic.n_per_iter < 1:
                raise ConfigError("stochastic.n_per_iter: need at least one pair per iteration")
            if self.stochastic.mode not in ("pair", "tournament"):
                raise ConfigError(f"stochastic.mode: unknown mode {self.stochastic.mode!r}")
        if not isinstance(self.game, dict):
            raise ConfigError("game: expected a generator spec dict or {'file': path}")
        if "file" in self.game:
            if not os.path.exists(self.game["file"]):
                raise ConfigError(f"game.file: no such file: {self.game['file']}")
        else:
            GameGenSpec.from_json_dict({**self.game, "seed": self.game.get("seed", 0)})

    def eta_values(self):
        if isinstance(self.eta, dict):
            return [1.0 / v for v in self.eta["inv_grid"]]
        return [self.eta]

    def to_json_dict(self):
        return {
            "game": self.game,
            "algorithms": list(self.algorithms),
            "T_values": [int(t) for t in self.T_values],
            "seeds": [int(s) for s in self.seeds],
            "eta": self.eta,
            "out_dir": self.out_dir,
            "tau": self.tau,
            "ref_policy": self.ref_policy,
            "stochastic": self.stochastic.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        missing = sorted({"game", "algorithms", "T_values", "seeds"} - set(d))
        if missing:
            raise ConfigError(f"missing config fields: {', '.join(missing)}")
        if "stochastic" in d:
            d["stochastic"] = StochasticOptions.from_json_dict(d["stochastic"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass
class RateFit:
    """Log-log slope of a gap curve over its tail."""

    slope: float
    intercept: float
    r_squared: float
    tail_fraction: float
    n_used: int
    n_excluded: int

    def to_json_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "tail_fraction": self.tail_fraction,
            "n_used": self.n_used,
            "n_excluded": self.n_excluded,
        }


def fit_rate(gap_curve, tail_fraction=0.5):
    """Least-squares slope of log(gap) against log(T) over the curve's tail.

    Zero or negative gaps cannot enter the log fit; they are dropped and
    counted in n_excluded. Fewer than three usable points is an error.
    """
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError(f"tail_fraction must be in (0, 1], got {tail_fraction}")
    pts = sorted((float(t), float(g)) for t, g in gap_curve)
    usable = [(t, g) for t, g in pts if g > 0.0]
    n_excluded = len(pts) - len(usable)
    if len(usable) < 3:
        raise ValueError(
            f"need at least 3 points with positive gaps, got {len(usable)} "
            f"({n_excluded} excluded)"
        )
    tail_start = int(np.floor(len(usable) * (1.0 - tail_fraction)))
    tail = usable[tail_start:]
    if len(tail) < 3:
        tail = usable[-3:]
    lt = np.log([t for t, _ in tail])
    lg = np.log([g for _, g in tail])
    slope, intercept = np.polyfit(lt, lg, 1)
    pred = slope * lt + intercept
    ss_res = float(np.sum((lg - pred) ** 2))
    ss_tot = float(np.sum((lg - lg.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        tail_fraction=tail_fraction,
        n_used=len(tail),
        n_excluded=n_excluded,
    )


def _game_for_seed(config, seed):
    if "file" in config.game:
        with open(config.game["file"]) as fh:
            return PreferenceGame.from_json_dict(json.load(fh))
    spec = GameGenSpec.from_json_dict({**config.game, "seed": seed})
    return make_game(spec)


def _sampling_seed(seed):
    # independent Philox stream for oracle draws, keyed off the run seed
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(1,))


def _eta_tag(eta_spec):
    return "theorem" if isinstance(eta_spec, str) else repr(float(eta_spec))


def run_name(algorithm, T, eta_spec, seed):
    return f"{algorithm}_T{T}_eta{_eta_tag(eta_spec)}_seed{seed}"


def _execute(config, game, algorithm, T, eta_spec, seed):
    if algorithm == "onpo_stochastic":
        opts = config.stochastic
        if isinstance(eta_spec, str):
            raise ConfigError("eta: onpo_stochastic requires a numeric eta")
        eta = float(eta_spec)
        rng_seed = int(_sampling_seed(seed).generate_state(1, np.uint64)[0])
        return onpo_stochastic_run(
            game, None, T, eta, opts.n_per_iter, opts.mode, opts.fit, rng_seed, k=opts.k
        )
    solver_config = SolverConfig(
        algorithm=algorithm,
        T=T,
        eta=eta_spec,
        tau=config.tau if algorithm in ("nash_md", "online_ipo") else None,
        ref_policy=config.ref_policy if algorithm in ("nash_md", "online_ipo") else None,
    )
    return run_solver(game, solver_config)


def _bound_record(log, game, algorithm, eta_spec, T):
    """Theorem bound and pass flag, only when a theorem eta was requested."""
    if not (isinstance(eta_spec, str) and algorithm in ("omd", "onpo")):
        return None, None
    D = kl_diameter(log.policies[0])
    bound = theorem_gap_bound(algorithm, D, T)
    gap = duality_gap(game, log.average)
    return float(bound), bool(gap <= bound + BOUND_TOL)


def run_experiment(config):
    """Execute all runs of a config; write traces, CSVs and summary.json.

    Returns (summary dict, number of bound violations). The summary is
    deterministic for a fixed config: no timestamps, keys sorted on write.
    """
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    runs = []
    violations = 0
    for algorithm in config.algorithms:
        for T in config.T_values:
            for eta_spec in config.eta_values():
                for seed in config.seeds:
                    game = _game_for_seed(config, seed)
                    name = run_name(algorithm, T, eta_spec, seed)
                    error = None
                    try:
                        log = _execute(config, game, algorithm, T, eta_spec, seed)
                    except FitError as exc:
                        error = str(exc)
                        log = None
                    record = {
                        "algorithm": algorithm,
                        "T": int(T),
                        "eta_spec": eta_spec,
                        "seed": int(seed),
                        "log_file": f"{name}.json",
                        "error": error,
                    }
                    if log is not None:
                        bound, ok = _bound_record(log, game, algorithm, eta_spec, T)
                        record.update(
                            eta=float(log.eta),
                            dualgap_avg_final=duality_gap(game, log.average),
                            dualgap_last_final=float(log.dualgap_last[-1]),
                            bound=bound,
                            bound_ok=ok,
                        )
                        if ok is False:
                            violations += 1
                        with open(os.path.join(config.out_dir, f"{name}.json"), "w") as fh:
                            json.dump(log.to_json_dict(game=game), fh, sort_keys=True)
                        log.write_csv(os.path.join(config.out_dir, f"{name}.csv"))
                    runs.append(record)
    runs.sort(key=lambda r: (r["algorithm"], r["T"], _eta_tag(r["eta_spec"]), r["seed"]))
    summary = {
        "config": config.to_json_dict(),
        "runs": runs,
        "violations": violations,
    }
    with open(os.path.join(config.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return summary, violations


def sweep_eta(config, inv_grid=None):
    """Run the eta grid and tabulate final gaps per cell.

    Returns rows of (algorithm, T, seed, inv_eta, eta, gap_last, gap_avg,
    status). Failed fits are flagged in the status column, never dropped.
    """
    config.validate()
    grid = list(inv_grid if inv_grid is not None else DEFAULT_INV_ETA_GRID)
    if isinstance(config.eta, dict):
        grid = list(config.eta["inv_grid"])
    if not grid:
        raise ConfigError("eta.inv_grid: grid must be nonempty")
    rows = []
    for algorithm in config.algorithms:
        for T in config.T_values:
            for inv_eta in grid:
                for seed in config.seeds:
                    game = _game_for_seed(config, seed)
                    try:
                        log = _execute(config, game, algorithm, T, 1.0 / inv_eta, seed)
                        rows.append({
                            "algorithm": algorithm,
                            "T": int(T),
                            "seed": int(seed),
                            "inv_eta": float(inv_eta),
                            "eta": 1.0 / inv_eta,
                            "dualgap_last_final": float(log.dualgap_last[-1]),
                            "dualgap_avg_final": duality_gap(game, log.average),
                            "status": "ok",
                        })
                    except FitError as exc:
                        rows.append({
                            "algorithm": algorithm,
                            "T": int(T),
                            "seed": int(seed),
                            "inv_eta": float(inv_eta),
                            "eta": 1.0 / inv_eta,
                            "dualgap_last_final": None,
                            "dualgap_avg_final": None,
                            "status": f"fit_error: {exc}",
                        })
    rows.sort(key=lambda r: (r["algorithm"], r["T"], r["inv_eta"], r["seed"]))
    return rows


def write_sweep_csv(rows, path):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["algorithm", "T", "seed", "inv_eta", "eta",
             "dualgap_last_final", "dualgap_avg_final", "status"]
        )
        for r in rows:
            writer.writerow([
                r["algorithm"], r["T"], r["seed"], repr(r["inv_eta"]), repr(r["eta"]),
                "" if r["dualgap_last_final"] is None else repr(r["dualgap_last_final"]),
                "" if r["dualgap_avg_final"] is None else repr(r["dualgap_avg_final"]),
                r["status"],
            ])


def verify_reports(out_dir):
    """Recompute every bound flag in a summary from the raw run logs.

    The average policy is re-derived by independent summation over the
    logged iterates and the gap recomputed from the game matrix embedded
    in each trace. Returns (violations, mismatches) where mismatches are
    disagreements with the stored flags.
    """
    summary_path = os.path.join(out_dir, "summary.json")
    if not os.path.exists(summary_path):
        raise ConfigError(f"no summary found: {summary_path}")
    with open(summary_path) as fh:
        summary = json.load(fh)
    violations, mismatches = [], []
    for record in summary["runs"]:
        if record.get("bound") is None:
            continue
        path = os.path.join(out_dir, record["log_file"])
        with open(path) as fh:
            payload = json.load(fh)
        game = PreferenceGame.from_json_dict(payload["game"])
        log = RunLog.from_json_dict(payload)
        total = np.zeros(game.n)
        for row in log.policies:
            total = total + row
        avg = total / len(log)
        gap = duality_gap(game, avg)
        D = kl_diameter(log.policies[0])
        bound = theorem_gap_bound(record["algorithm"], D, record["T"])
        ok = bool(gap <= bound + BOUND_TOL)
        if not ok:
            violations.append(record["log_file"])
        if ok != record["bound_ok"] or abs(bound - record["bound"]) > 1e-9:
            mismatches.append(record["log_file"])
    return violations, mismatches
