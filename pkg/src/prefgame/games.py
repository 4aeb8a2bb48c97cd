"""Finite zero-sum preference games and their win-rate algebra.

A preference game over n responses is an n x n matrix p with
p[i][j] = probability that response i is preferred to response j.
Skew-complementarity (p + p^T = 1 entrywise) makes the induced
two-player game symmetric zero-sum with self-play value 0.5.
"""

import json
from dataclasses import dataclass, field

import numpy as np

SKEW_ATOL = 1e-12
POLICY_ATOL = 1e-12
INTERIOR_MIN = 1e-300

GAME_KINDS = ("random_skew", "bradley_terry", "cycle")


class GameValidationError(ValueError):
    """A matrix violates the preference-game structure."""


class PreferenceGame:
    """Validated win-probability matrix. Construct through validate_game/make_game."""

    def __init__(self, p):
        self.p = np.asarray(p, dtype=float)
        self.n = self.p.shape[0]

    def __repr__(self):
        return f"PreferenceGame(n={self.n})"

    def to_json_dict(self):
        return {"n": self.n, "p": self.p.tolist()}

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d):
        game = validate_game(d["p"])
        if game.n != d["n"]:
            raise GameValidationError(f"declared n={d['n']} but matrix is {game.n}x{game.n}")
        return game

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


def validate_game(matrix):
    """Check preference-game invariants, naming the first violated cell on failure."""
    p = np.asarray(matrix, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise GameValidationError(f"matrix must be square, got shape {p.shape}")
    n = p.shape[0]
    if n < 2:
        raise GameValidationError(f"need at least 2 responses, got n={n}")
    bad = ~np.isfinite(p) | (p < 0.0) | (p > 1.0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise GameValidationError(f"p[{i}][{j}] = {p[i, j]} outside [0, 1]")
    off_diag = np.abs(np.diag(p) - 0.5) > SKEW_ATOL
    if off_diag.any():
        i = int(np.argmax(off_diag))
        raise GameValidationError(f"p[{i}][{i}] = {p[i, i]}: diagonal != 0.5")
    skew = np.abs(p + p.T - 1.0) > SKEW_ATOL
    if skew.any():
        i, j = np.argwhere(skew)[0]
        raise GameValidationError(f"p[{i}][{j}] + p[{j}][{i}] = {p[i, j] + p[j, i]} != 1")
    return PreferenceGame(p)


def validate_policy(probs, n=None):
    """Return probs as a float array after simplex checks."""
    pi = np.asarray(probs, dtype=float)
    if pi.ndim != 1:
        raise ValueError(f"policy must be a vector, got shape {pi.shape}")
    if n is not None and len(pi) != n:
        raise ValueError(f"policy has {len(pi)} entries, game has {n} responses")
    if not np.all(np.isfinite(pi)) or np.any(pi < 0.0):
        raise ValueError("policy entries must be finite and >= 0")
    if abs(pi.sum() - 1.0) > POLICY_ATOL:
        raise ValueError(f"policy sums to {pi.sum()}, not 1")
    return pi


def is_interior(probs):
    """Mirror-descent updates need full support; the cutoff guards against underflow."""
    return bool(np.all(np.asarray(probs) >= INTERIOR_MIN))


def uniform_policy(n):
    return np.full(n, 1.0 / n)


def point_mass(n, i):
    pi = np.zeros(n)
    pi[i] = 1.0
    return pi


def win_rate_vector(game, opponent):
    """Expected win rate of each response against the opponent policy."""
    opp = validate_policy(opponent, game.n)
    return game.p @ opp


def game_value(game, max_player, min_player):
    """Win probability of the max player's policy over the min player's."""
    p1 = validate_policy(max_player, game.n)
    p2 = validate_policy(min_player, game.n)
    return float(p1 @ game.p @ p2)


def duality_gap(game, policy):
    """Best-response value gap of a policy; zero exactly at a Nash policy.

    Skew-complementarity collapses max-player minus min-player best response
    values to 2 * max_i r_i - 1 with r the win-rate vector against the policy.
    """
    r = win_rate_vector(game, policy)
    return float(2.0 * r.max() - 1.0)


def kl_divergence(p, q):
    """KL(p || q) with the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        i = int(np.argmax(mask & (q == 0.0)))
        raise ValueError(f"KL divergence undefined: q[{i}] = 0 where p[{i}] > 0")
    val = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    # float cancellation can leave a tiny negative when p ~ q
    return max(val, 0.0)


@dataclass
class GameGenSpec:
    """Deterministic recipe for a synthetic preference game."""

    kind: str
    n: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GAME_KINDS:
            raise ValueError(f"unknown game kind {self.kind!r}, expected one of {GAME_KINDS}")
        if self.n < 2:
            raise ValueError(f"need n >= 2, got {self.n}")

    def to_json_dict(self):
        return {"kind": self.kind, "n": self.n, "seed": int(self.seed), "params": self.params}

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d):
        return cls(kind=d["kind"], n=d["n"], seed=d["seed"], params=d.get("params", {}))

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


def make_game(spec):
    """Generate the preference game described by a GameGenSpec.

    random_skew: upper triangle iid uniform on [0, 1], lower by complement.
    bradley_terry: p[i][j] = logistic(R_i - R_j) from params["rewards"].
    cycle: response i beats (i+1) mod n by params["margin"]; other pairs tie.
    """
    n = spec.n
    if spec.kind == "random_skew":
        rng = np.random.Generator(np.random.Philox(spec.seed))
        p = np.full((n, n), 0.5)
        iu = np.triu_indices(n, k=1)
        vals = rng.random(len(iu[0]))
        p[iu] = vals
        p[(iu[1], iu[0])] = 1.0 - vals
    elif spec.kind == "bradley_terry":
        rewards = np.asarray(spec.params["rewards"], dtype=float)
        if len(rewards) != n:
            raise ValueError(f"rewards has {len(rewards)} entries for n={n}")
        diff = rewards[:, None] - rewards[None, :]
        p = 1.0 / (1.0 + np.exp(-diff))
    elif spec.kind == "cycle":
        margin = float(spec.params["margin"])
        if not 0.0 < margin <= 0.5:
            raise ValueError(f"cycle margin must be in (0, 0.5], got {margin}")
        if n < 3:
            raise ValueError("cycle games need n >= 3")
        p = np.full((n, n), 0.5)
        for i in range(n):
            j = (i + 1) % n
            p[i, j] = 0.5 + margin
            p[j, i] = 0.5 - margin
    else:  # unreachable, guarded in GameGenSpec
        raise ValueError(spec.kind)
    # symmetrize against float round-off before validating
    p = (p + (1.0 - p.T)) / 2.0
    return validate_game(p)
