"""Stochastic preference-feedback training loop.

Implements the sampled counterpart of the optimistic solver: draw
response pairs from the current policy, label them with one Bernoulli
oracle query each, and fit the next policy by minimizing the squared
pair loss (g - eta/2)^2 over the dataset, where g is the log-ratio of
the candidate relative to an anchor policy.

Reproducibility contract: one Philox (counter-based, 64-bit) stream per
run, seeded explicitly. Draws are consumed per datum in a documented
order: pair mode uses (sample y, sample y', label); tournament mode uses
K sampling draws, then K-1 winner-bracket labels, then K-1 loser-bracket
labels. estimate_win_rate consumes (opponent draw, label draw) per query.
"""

import csv
import json
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .games import is_interior, uniform_policy, validate_policy, win_rate_vector
from .optim import FitConfig, gauge_fix, softmax, solve_pair_quadratic
from .solvers import RunLog, _Tracker

DATASET_MODES = ("pair", "tournament")


class PreferencePair(NamedTuple):
    winner: int
    loser: int


def make_rng(seed):
    """Counter-based generator with an explicit 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def logits_from_policy(policy):
    """Gauge-fixed (zero-sum) logits of an interior policy."""
    policy = validate_policy(policy)
    if not is_interior(policy):
        raise ValueError("logit representation needs an interior policy")
    return gauge_fix(np.log(policy))


def policy_from_logits(logits):
    return softmax(logits)


@dataclass
class PreferenceDataset:
    """Sampled (winner, loser) index pairs plus provenance."""

    winners: np.ndarray
    losers: np.ndarray
    source_policy_id: str = ""
    seed: int = None
    mode: str = "pair"
    k: int = None

    def __post_init__(self):
        self.winners = np.asarray(self.winners, dtype=int)
        self.losers = np.asarray(self.losers, dtype=int)
        if self.winners.shape != self.losers.shape:
            raise ValueError("winners and losers must have equal length")

    def __len__(self):
        return len(self.winners)

    def pairs(self):
        return [PreferencePair(int(w), int(l)) for w, l in zip(self.winners, self.losers)]

    def to_json_dict(self):
        return {
            "winners": self.winners.tolist(),
            "losers": self.losers.tolist(),
            "source_policy_id": self.source_policy_id,
            "seed": self.seed,
            "mode": self.mode,
            "k": self.k,
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["winner", "loser"])
            for w, l in zip(self.winners, self.losers):
                writer.writerow([int(w), int(l)])


def oracle_label(game, i, j, rng):
    """One Bernoulli oracle query: (i, j) with probability p[i][j], else (j, i)."""
    n = game.n
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"response indices ({i}, {j}) out of range for n={n}")
    if rng.random() < game.p[i, j]:
        return PreferencePair(i, j)
    return PreferencePair(j, i)


def _sample_indices(cdf, uniforms, n):
    return np.minimum(np.searchsorted(cdf, uniforms, side="right"), n - 1)


def _bracket(entrants, uniforms, p, pick_winner):
    """Single-elimination pass; uniforms[c] < p[a, b] decides comparison c."""
    consumed = 0
    alive = list(entrants)
    while len(alive) > 1:
        nxt = []
        for a, b in zip(alive[0::2], alive[1::2]):
            a_won = uniforms[consumed] < p[a, b]
            consumed += 1
            if pick_winner:
                nxt.append(a if a_won else b)
            else:
                nxt.append(b if a_won else a)
        alive = nxt
    return int(alive[0])


def build_dataset(game, policy, n, mode, rng, k=8, source_policy_id=""):
    """Sample a labeled preference dataset from a policy.

    pair mode: n iid response pairs, each ordered by one oracle query.
    tournament mode: per datum, k iid responses; the winner comes from a
    single-elimination bracket over them, the loser from a second bracket
    of the same shape that advances the loser of each comparison.
    """
    policy = validate_policy(policy, game.n)
    if n < 1:
        raise ValueError(f"need at least one pair, got n={n}")
    if mode not in DATASET_MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {DATASET_MODES}")
    cdf = np.cumsum(policy)
    if mode == "pair":
        us = rng.random((n, 3))
        ys = _sample_indices(cdf, us[:, 0], game.n)
        yps = _sample_indices(cdf, us[:, 1], game.n)
        won = us[:, 2] < game.p[ys, yps]
        winners = np.where(won, ys, yps)
        losers = np.where(won, yps, ys)
    else:
        if k < 2 or (k & (k - 1)) != 0:
            raise ValueError(f"tournament size must be a power of two >= 2, got k={k}")
        winners = np.empty(n, dtype=int)
        losers = np.empty(n, dtype=int)
        us = rng.random((n, 3 * k - 2))
        for m in range(n):
            entrants = _sample_indices(cdf, us[m, :k], game.n)
            winners[m] = _bracket(entrants, us[m, k:2 * k - 1], game.p, pick_winner=True)
            losers[m] = _bracket(entrants, us[m, 2 * k - 1:], game.p, pick_winner=False)
    return PreferenceDataset(
        winners, losers, source_policy_id=source_policy_id, mode=mode,
        k=k if mode == "tournament" else None,
    )


def pair_loss(logits, anchor, dataset, eta):
    """Mean squared pair loss and its exact gradient in logits.

    loss = mean over pairs of (g - eta/2)^2 with
    g = (logits[w] - logits[l]) - log(anchor[w]/anchor[l]).
    Shift-invariant in logits, so any gauge works.
    """
    logits = np.asarray(logits, dtype=float)
    anchor = validate_policy(anchor)
    if logits.shape != anchor.shape:
        raise ValueError(f"logits shape {logits.shape} != anchor shape {anchor.shape}")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if np.any(anchor[dataset.winners] == 0.0) or np.any(anchor[dataset.losers] == 0.0):
        raise ValueError("anchor has zero mass on a referenced response")
    log_anchor = np.log(anchor)
    g = (logits[dataset.winners] - logits[dataset.losers]) - (
        log_anchor[dataset.winners] - log_anchor[dataset.losers]
    )
    resid = g - eta / 2.0
    loss = float(np.mean(resid * resid))
    grad = np.zeros_like(logits)
    scale = 2.0 / len(dataset)
    np.add.at(grad, dataset.winners, scale * resid)
    np.add.at(grad, dataset.losers, -scale * resid)
    return loss, grad


def fit_policy(anchor, dataset, eta, fit=None):
    """Minimize the pair loss over policies anchored at `anchor`.

    Solves for a logit offset relative to the anchor, so a dataset with no
    usable direction (all self-pairs) returns the anchor itself. The direct
    method solves the convex quadratic exactly; gradient descent is the
    independent route and must reach its gradient tolerance.
    """
    fit = fit or FitConfig()
    anchor = validate_policy(anchor)
    if not is_interior(anchor):
        raise ValueError("anchor must be interior")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    m = len(dataset)
    weights = np.full(m, 1.0 / m)
    targets = np.full(m, eta / 2.0)
    delta = solve_pair_quadratic(len(anchor), dataset.winners, dataset.losers,
                                 weights, targets, fit)
    return softmax(gauge_fix(np.log(anchor) + delta))


def onpo_stochastic_run(game, start, T, eta, n_per_iter, mode, fit, seed, k=8):
    """Sampled optimistic self-play loop.

    Per iteration t = 1..T-1: build a dataset from pi_t, fit the auxiliary
    policy with anchor aux_t, then fit pi_{t+1} with anchor aux_{t+1}, both
    against the same dataset. Duality gaps are logged exactly using the
    true game matrix, which is available in simulation.
    """
    t0 = time.perf_counter()
    pi = _prepare(game, start)
    aux = pi.copy()
    fit = fit or FitConfig()
    rng = make_rng(seed)
    tracker = _Tracker(game)
    aux_log = []
    for t in range(1, T + 1):
        aux_log.append(aux)
        tracker.record(pi)
        if t == T:
            break
        dataset = build_dataset(game, pi, n_per_iter, mode, rng, k=k,
                                source_policy_id=f"iterate_{t}")
        aux = fit_policy(aux, dataset, eta, fit)
        pi = fit_policy(aux, dataset, eta, fit)
    config = {
        "algorithm": "onpo_stochastic",
        "T": T,
        "eta": eta,
        "n_per_iter": n_per_iter,
        "mode": mode,
        "k": k if mode == "tournament" else None,
        "seed": int(seed),
        "fit": fit.to_json_dict(),
    }
    return tracker.finish("onpo_stochastic", float(eta), config, t0, aux=aux_log)


def _prepare(game, start):
    if start is None:
        return uniform_policy(game.n)
    start = validate_policy(start, game.n)
    if not is_interior(start):
        raise ValueError("start policy must be interior")
    return start


def estimate_win_rate(game, i, policy, M, rng):
    """Monte-Carlo estimate of the win rate of response i against a policy.

    Each of the M queries draws one opponent from the policy and one oracle
    label; the estimate is the mean of the M Bernoulli outcomes.
    """
    if M < 1:
        raise ValueError(f"need M >= 1 queries, got {M}")
    policy = validate_policy(policy, game.n)
    if not 0 <= i < game.n:
        raise ValueError(f"response index {i} out of range for n={game.n}")
    cdf = np.cumsum(policy)
    us = rng.random((M, 2))
    opponents = _sample_indices(cdf, us[:, 0], game.n)
    wins = us[:, 1] < game.p[i, opponents]
    return float(wins.mean())
