"""Exact tabular self-play solvers for preference games.

Five algorithms share one logging format: plain mirror-descent self-play
(omd), its optimistic two-step variant (onpo), Nash-MD with a geometric
mixture opponent, SPPO's squared-loss update, and the online IPO
population loss. Every iterate, reward vector and duality gap is logged
so the documented convergence bounds can be checked after the fact.
"""

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .games import (
    duality_gap,
    is_interior,
    kl_divergence,
    uniform_policy,
    validate_policy,
    win_rate_vector,
)
from .optim import FitConfig, FitError, gauge_fix, softmax, solve_pair_quadratic

ALGORITHMS = ("omd", "onpo", "nash_md", "sppo", "online_ipo")
_NEEDS_TAU = ("nash_md", "online_ipo")
_THEOREM_ETA_OK = ("omd", "onpo")


@dataclass
class SolverConfig:
    """Run recipe: algorithm, horizon, step size and baseline extras.

    eta may be the string "theorem" (omd/onpo only), which resolves to
    sqrt(D/T) for omd and min(1/2, sqrt(D)) for onpo, where D is the KL
    diameter of the start policy (log n for a uniform start).
    """

    algorithm: str
    T: int
    eta: object = "theorem"
    tau: float = None
    ref_policy: object = None
    inner_opt: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if isinstance(self.eta, str):
            if self.eta != "theorem":
                raise ValueError(f"eta must be a positive number or 'theorem', got {self.eta!r}")
            if self.algorithm not in _THEOREM_ETA_OK:
                raise ValueError(f"eta='theorem' is only defined for {_THEOREM_ETA_OK}")
        elif not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        needs_tau = self.algorithm in _NEEDS_TAU
        if needs_tau and (self.tau is None or not self.tau > 0):
            raise ValueError(f"{self.algorithm} requires tau > 0")
        if not needs_tau and self.tau is not None:
            raise ValueError(f"tau is only meaningful for {_NEEDS_TAU}")
        if needs_tau and self.ref_policy is None:
            raise ValueError(f"{self.algorithm} requires a ref_policy")
        if self.ref_policy is not None:
            self.ref_policy = validate_policy(self.ref_policy)
            if not is_interior(self.ref_policy):
                raise ValueError("ref_policy must be interior")
        if self.algorithm == "nash_md" and not isinstance(self.eta, str):
            if self.eta * self.tau > 1.0:
                raise ValueError(f"nash_md needs eta*tau <= 1, got {self.eta * self.tau}")

    def to_json_dict(self):
        return {
            "algorithm": self.algorithm,
            "T": self.T,
            "eta": self.eta,
            "tau": self.tau,
            "ref_policy": None if self.ref_policy is None else list(self.ref_policy),
            "inner_opt": self.inner_opt.to_json_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d):
        d = dict(d)
        d["inner_opt"] = FitConfig.from_json_dict(d.get("inner_opt", FitConfig().to_json_dict()))
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


@dataclass
class RunLog:
    """Per-iteration trace of a solver run.

    rewards[t] is always the win-rate vector against policies[t], so the
    stability inequality |r_t - r_{t-1}|_inf <= |pi_t - pi_{t-1}|_1 can be
    checked on any log. aux_policies / predictors are populated where the
    algorithm has them (onpo, nash_md).
    """

    algorithm: str
    eta: float
    config: object  # SolverConfig or a plain provenance dict
    policies: np.ndarray
    rewards: np.ndarray
    dualgap_last: np.ndarray
    dualgap_avg: np.ndarray
    l1_steps: np.ndarray
    average: np.ndarray
    aux_policies: np.ndarray = None
    predictors: np.ndarray = None
    wall_time: float = 0.0

    def __len__(self):
        return self.policies.shape[0]

    def to_json_dict(self, game=None):
        config = self.config.to_json_dict() if hasattr(self.config, "to_json_dict") else self.config
        d = {
            "algorithm": self.algorithm,
            "eta": self.eta,
            "config": config,
            "policies": self.policies.tolist(),
            "rewards": self.rewards.tolist(),
            "dualgap_last": self.dualgap_last.tolist(),
            "dualgap_avg": self.dualgap_avg.tolist(),
            "l1_steps": self.l1_steps.tolist(),
            "average": self.average.tolist(),
            "aux_policies": None if self.aux_policies is None else self.aux_policies.tolist(),
            "predictors": None if self.predictors is None else self.predictors.tolist(),
            "wall_time": self.wall_time,
        }
        if game is not None:
            d["game"] = game.to_json_dict()
        return d

    @classmethod
    def from_json_dict(cls, d):
        arr = lambda x: None if x is None else np.asarray(x, dtype=float)
        return cls(
            algorithm=d["algorithm"],
            eta=d["eta"],
            config=d["config"],
            policies=arr(d["policies"]),
            rewards=arr(d["rewards"]),
            dualgap_last=arr(d["dualgap_last"]),
            dualgap_avg=arr(d["dualgap_avg"]),
            l1_steps=arr(d["l1_steps"]),
            average=arr(d["average"]),
            aux_policies=arr(d["aux_policies"]),
            predictors=arr(d["predictors"]),
            wall_time=d.get("wall_time", 0.0),
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "dualgap_last", "dualgap_avg", "l1_step", "eta"])
            for t in range(len(self)):
                writer.writerow(
                    [t + 1, repr(self.dualgap_last[t]), repr(self.dualgap_avg[t]),
                     repr(self.l1_steps[t]), repr(self.eta)]
                )


def kl_diameter(start):
    """max over vertices of KL(vertex || start); log n for a uniform start."""
    start = validate_policy(start)
    if not is_interior(start):
        raise ValueError("start policy must be interior")
    return float(-np.log(start.min()))


def resolve_eta(config, start):
    """Turn eta='theorem' into its numeric value for the given start policy."""
    if not isinstance(config.eta, str):
        return float(config.eta)
    D = kl_diameter(start)
    if config.algorithm == "omd":
        return float(np.sqrt(D / config.T))
    if config.algorithm == "onpo":
        return float(min(0.5, np.sqrt(D)))
    raise ValueError(f"no theorem eta for {config.algorithm}")


def theorem_gap_bound(algorithm, D, T):
    """Documented duality-gap bound for the average iterate under theorem eta."""
    if algorithm == "omd":
        return 4.0 * np.sqrt(D) / np.sqrt(T)
    if algorithm == "onpo":
        return 4.0 * np.sqrt(D) / T
    return None


def md_step(base, reward, eta):
    """Multiplicative-weights step: the unique maximizer of
    <pi, reward> - (1/eta) KL(pi || base).

    Computed in log space; invariant under adding a constant to reward.
    """
    base = validate_policy(base)
    if not is_interior(base):
        raise ValueError("md_step requires an interior base policy")
    reward = np.asarray(reward, dtype=float)
    if reward.shape != base.shape:
        raise ValueError(f"reward shape {reward.shape} != policy shape {base.shape}")
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward entries must be finite")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    return softmax(np.log(base) + eta * reward)


def md_objective(candidate, base, reward, eta):
    """Objective maximized by md_step, exposed for brute-force cross-checks."""
    return float(np.dot(candidate, reward) - kl_divergence(candidate, base) / eta)


def geometric_mixture(policy, ref, exponent):
    """Normalized pointwise product policy^(1-exponent) * ref^exponent."""
    if not 0.0 <= exponent <= 1.0:
        raise ValueError(f"mixture exponent must be in [0, 1], got {exponent}")
    return softmax((1.0 - exponent) * np.log(policy) + exponent * np.log(ref))


def _prepare_start(game, start):
    if start is None:
        return uniform_policy(game.n)
    start = validate_policy(start, game.n)
    if not is_interior(start):
        raise ValueError("start policy must be interior")
    return start


class _Tracker:
    """Accumulates the per-iteration log rows shared by all solvers."""

    def __init__(self, game):
        self.game = game
        self.policies = []
        self.rewards = []
        self.gap_last = []
        self.gap_avg = []
        self.l1 = []
        self._sum = np.zeros(game.n)

    def record(self, policy):
        reward = win_rate_vector(self.game, policy)
        prev = self.policies[-1] if self.policies else policy
        self._sum += policy
        avg = self._sum / (len(self.policies) + 1)
        self.policies.append(policy)
        self.rewards.append(reward)
        self.gap_last.append(duality_gap(self.game, policy))
        self.gap_avg.append(duality_gap(self.game, avg))
        self.l1.append(float(np.abs(policy - prev).sum()))
        return reward

    def finish(self, algorithm, eta, config, t0, aux=None, predictors=None):
        policies = np.array(self.policies)
        return RunLog(
            algorithm=algorithm,
            eta=eta,
            config=config,
            policies=policies,
            rewards=np.array(self.rewards),
            dualgap_last=np.array(self.gap_last),
            dualgap_avg=np.array(self.gap_avg),
            l1_steps=np.array(self.l1),
            average=policies.mean(axis=0),
            aux_policies=None if aux is None else np.array(aux),
            predictors=None if predictors is None else np.array(predictors),
            wall_time=time.perf_counter() - t0,
        )


def omd_selfplay(game, config, start=None):
    """Mirror-descent self-play: pi_{t+1} = md_step(pi_t, r_t, eta)."""
    if config.algorithm != "omd":
        raise ValueError(f"config is for {config.algorithm}, not omd")
    t0 = time.perf_counter()
    pi = _prepare_start(game, start)
    eta = resolve_eta(config, pi)
    tracker = _Tracker(game)
    for _ in range(config.T):
        reward = tracker.record(pi)
        pi = md_step(pi, reward, eta)
    return tracker.finish("omd", eta, config, t0)


def onpo_run(game, config, start=None):
    """Optimistic two-step self-play with last round's reward as predictor.

    pi_t      = md_step(aux_t, m_t, eta),   m_t = r_{t-1}, m_1 = 0
    aux_{t+1} = md_step(aux_t, r_t, eta),   r_t = win rate against pi_t

    Both sequences start at the same policy; m_1 = 0 keeps pi_1 there.
    """
    if config.algorithm != "onpo":
        raise ValueError(f"config is for {config.algorithm}, not onpo")
    t0 = time.perf_counter()
    aux = _prepare_start(game, start)
    eta = resolve_eta(config, aux)
    predictor = np.zeros(game.n)
    tracker = _Tracker(game)
    aux_log, pred_log = [], []
    for _ in range(config.T):
        pi = md_step(aux, predictor, eta)
        aux_log.append(aux)
        pred_log.append(predictor)
        reward = tracker.record(pi)
        aux = md_step(aux, reward, eta)
        predictor = reward
    return tracker.finish("onpo", eta, config, t0, aux=aux_log, predictors=pred_log)


def nash_md_run(game, config, start=None):
    """Nash-MD: step from the geometric mixture of the iterate and the reference.

    aux_t ~ policy^(1-eta*tau) * ref^(eta*tau), then
    pi_{t+1} = md_step(aux_t, win_rate(aux_t), eta).
    """
    if config.algorithm != "nash_md":
        raise ValueError(f"config is for {config.algorithm}, not nash_md")
    t0 = time.perf_counter()
    pi = _prepare_start(game, start)
    eta = resolve_eta(config, pi)
    exponent = eta * config.tau
    if not 0.0 < exponent <= 1.0:
        raise ValueError(f"nash_md needs eta*tau in (0, 1], got {exponent}")
    ref = validate_policy(config.ref_policy, game.n)
    tracker = _Tracker(game)
    aux_log = []
    for _ in range(config.T):
        mixture = geometric_mixture(pi, ref, exponent)
        aux_log.append(mixture)
        tracker.record(pi)
        pi = md_step(mixture, win_rate_vector(game, mixture), eta)
    return tracker.finish("nash_md", eta, config, t0, aux=aux_log)


def sppo_step(policy, reward, eta, fit=None):
    """Exact SPPO update: argmin of the squared log-ratio regression loss.

    The loss E_{y~policy}(log(pi(y)/policy(y)) - eta*(r(y)-1/2))^2 is
    minimized in its shift-reduced pairwise form, which is a convex
    quadratic in logit offsets (the normalizer drops out of ratios).
    """
    n = len(policy)
    b = eta * (reward - 0.5)
    idx = np.arange(n)
    winners, losers = np.meshgrid(idx, idx, indexing="ij")
    mask = winners != losers
    winners, losers = winners[mask], losers[mask]
    weights = policy[winners] * policy[losers]
    targets = b[winners] - b[losers]
    delta = solve_pair_quadratic(n, winners, losers, weights, targets, fit)
    return softmax(gauge_fix(np.log(policy) + delta))


def sppo_iteration_loss(candidate, base, reward, eta):
    """The SPPO squared loss of a candidate policy at one iteration."""
    g = np.log(candidate) - np.log(base)
    resid = g - eta * (reward - 0.5)
    return float(np.sum(base * resid * resid))


def sppo_run(game, config, start=None):
    """Self-play with the SPPO squared-loss update, solved exactly per step."""
    if config.algorithm != "sppo":
        raise ValueError(f"config is for {config.algorithm}, not sppo")
    t0 = time.perf_counter()
    pi = _prepare_start(game, start)
    eta = resolve_eta(config, pi)
    tracker = _Tracker(game)
    for _ in range(config.T):
        reward = tracker.record(pi)
        pi = sppo_step(pi, reward, eta, config.inner_opt)
    return tracker.finish("sppo", eta, config, t0)


def _ipo_pair_weights(game, sampler):
    """Ordered (winner, loser) weights induced by sampling two responses from
    the frozen policy and ordering them by the preference draw."""
    q = sampler
    w = 2.0 * np.outer(q, q) * game.p
    return w


def ipo_population_loss(game, candidate, sampler, ref, tau):
    """Exact online-IPO population loss with a frozen sampling policy."""
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    target = 1.0 / (2.0 * tau)
    h = np.log(candidate) - np.log(ref)
    diff = h[:, None] - h[None, :]
    weights = _ipo_pair_weights(game, sampler)
    resid = diff - target
    return float(np.sum(weights * resid * resid))


def ipo_phase(game, sampler, ref, tau, fit=None):
    """One stop-gradient phase: minimize the population loss with the
    sampling policy held fixed."""
    n = game.n
    target = 1.0 / (2.0 * tau)
    idx = np.arange(n)
    winners, losers = np.meshgrid(idx, idx, indexing="ij")
    mask = winners != losers
    winners, losers = winners[mask], losers[mask]
    weights = _ipo_pair_weights(game, sampler)[mask]
    targets = np.full(len(winners), target)
    delta = solve_pair_quadratic(n, winners, losers, weights, targets, fit)
    return softmax(gauge_fix(np.log(ref) + delta))


def online_ipo_run(game, config, start=None):
    """Online IPO with exact tabular phase optimization.

    Each iteration freezes the current policy as the pair sampler,
    minimizes the population loss exactly, then refreshes the sampler.
    """
    if config.algorithm != "online_ipo":
        raise ValueError(f"config is for {config.algorithm}, not online_ipo")
    t0 = time.perf_counter()
    pi = _prepare_start(game, start)
    eta = resolve_eta(config, pi)
    ref = validate_policy(config.ref_policy, game.n)
    tracker = _Tracker(game)
    for _ in range(config.T):
        tracker.record(pi)
        before = ipo_population_loss(game, pi, pi, ref, config.tau)
        new_pi = ipo_phase(game, pi, ref, config.tau, config.inner_opt)
        after = ipo_population_loss(game, new_pi, pi, ref, config.tau)
        if after > before + 1e-12:
            raise FitError(
                f"online_ipo phase increased the population loss: {before} -> {after}"
            )
        pi = new_pi
    return tracker.finish("online_ipo", eta, config, t0)


_RUNNERS = {
    "omd": omd_selfplay,
    "onpo": onpo_run,
    "nash_md": nash_md_run,
    "sppo": sppo_run,
    "online_ipo": online_ipo_run,
}


def run_solver(game, config, start=None):
    """Dispatch a SolverConfig to its algorithm."""
    return _RUNNERS[config.algorithm](game, config, start=start)


def average_policy(log):
    """Arithmetic mean of the logged iterates."""
    if len(log) == 0:
        raise ValueError("empty run log")
    return validate_policy(log.policies.mean(axis=0))


def regret_against(log, game, comparator):
    """Cumulative regret sum_t <comparator - pi_t, r_t> from the logged rewards."""
    comparator = validate_policy(comparator, game.n)
    if log.policies.shape[1] != game.n:
        raise ValueError(
            f"log has {log.policies.shape[1]} responses, game has {game.n}"
        )
    return float(np.sum(log.rewards @ comparator) - np.sum(log.rewards * log.policies))
