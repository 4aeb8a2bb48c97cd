"""Multi-turn extension: finite-horizon MDPs with terminal-state preferences.

Two players roll out the same tabular dynamics independently; only their
final states are compared, through a skew-complementary preference matrix.
Q-values of a self-play policy are computed exactly by backward induction,
per-state mirror-descent updates reuse md_step row by row, and
exploitability is measured with an exact best-response dynamic program.
"""

import json
from dataclasses import dataclass

import numpy as np

from .games import is_interior, validate_game, validate_policy
from .solvers import md_step

ROW_ATOL = 1e-12


class CmdpValidationError(ValueError):
    """A CMDP component violates its structural invariants."""


class TabularCMDP:
    """Finite-horizon MDP with a preference matrix over terminal states.

    transitions[h][s] is an (actions, next_states) row-stochastic array for
    step h (0-based; decision steps are h = 0..H-1). terminal_pref is a
    preference game matrix over the step-H states. Action counts may vary
    per state.
    """

    def __init__(self, transitions, terminal_pref, start_state=0):
        if not transitions:
            raise CmdpValidationError("need at least one decision step")
        self.transitions = [
            [np.asarray(rows, dtype=float) for rows in layer] for layer in transitions
        ]
        self.terminal_pref = validate_game(terminal_pref).p
        self.start_state = int(start_state)
        self.horizon = len(self.transitions)
        self._validate()

    def _validate(self):
        counts = [len(self.transitions[0])]
        for h, layer in enumerate(self.transitions):
            if not layer:
                raise CmdpValidationError(f"step {h} has no states")
            widths = set()
            for s, rows in enumerate(layer):
                if rows.ndim != 2 or rows.shape[0] < 1:
                    raise CmdpValidationError(f"transitions[{h}][{s}] must be (actions, states)")
                if np.any(rows < 0):
                    raise CmdpValidationError(f"transitions[{h}][{s}] has negative entries")
                sums = rows.sum(axis=1)
                if np.any(np.abs(sums - 1.0) > ROW_ATOL):
                    a = int(np.argmax(np.abs(sums - 1.0)))
                    raise CmdpValidationError(
                        f"transitions[{h}][{s}] row {a} sums to {sums[a]}, not 1"
                    )
                widths.add(rows.shape[1])
            if len(widths) != 1:
                raise CmdpValidationError(f"step {h} rows disagree on next-state count")
            counts.append(widths.pop())
        for h in range(1, self.horizon):
            if len(self.transitions[h]) != counts[h]:
                raise CmdpValidationError(
                    f"step {h} has {len(self.transitions[h])} states but step {h-1} "
                    f"transitions into {counts[h]}"
                )
        if self.terminal_pref.shape[0] != counts[-1]:
            raise CmdpValidationError(
                f"terminal_pref is over {self.terminal_pref.shape[0]} states but the "
                f"dynamics reach {counts[-1]}"
            )
        if not 0 <= self.start_state < counts[0]:
            raise CmdpValidationError(f"start state {self.start_state} out of range")
        self.state_counts = counts  # per step, terminal layer last

    def n_states(self, h):
        return self.state_counts[h]

    def n_actions(self, h, s):
        return self.transitions[h][s].shape[0]

    def to_json_dict(self):
        return {
            "horizon": self.horizon,
            "start_state": self.start_state,
            "states": self.state_counts,
            "actions": [[rows.shape[0] for rows in layer] for layer in self.transitions],
            "transitions": [[rows.tolist() for rows in layer] for layer in self.transitions],
            "terminal_pref": self.terminal_pref.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d):
        return cls(d["transitions"], d["terminal_pref"], d.get("start_state", 0))

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


def make_cmdp(n_states, n_actions, horizon, seed, concentration=0.3):
    """Random CMDP: Dirichlet transition rows and a random skew terminal matrix.

    Small concentration values give sharp transitions, which keeps the
    uniform policy meaningfully exploitable.
    """
    if n_states < 2 or n_actions < 1 or horizon < 1:
        raise ValueError("need n_states >= 2, n_actions >= 1, horizon >= 1")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    transitions = []
    for _ in range(horizon):
        layer = []
        for _ in range(n_states):
            rows = np.array(
                [rng.dirichlet(np.full(n_states, concentration)) for _ in range(n_actions)]
            )
            layer.append(rows)
        transitions.append(layer)
    pref = np.full((n_states, n_states), 0.5)
    iu = np.triu_indices(n_states, k=1)
    vals = rng.random(len(iu[0]))
    pref[iu] = vals
    pref[(iu[1], iu[0])] = 1.0 - vals
    return TabularCMDP(transitions, pref)


def uniform_state_policy(cmdp):
    return [
        [np.full(cmdp.n_actions(h, s), 1.0 / cmdp.n_actions(h, s))
         for s in range(cmdp.n_states(h))]
        for h in range(cmdp.horizon)
    ]


def validate_state_policy(cmdp, policy, interior=False):
    if len(policy) != cmdp.horizon:
        raise ValueError(f"policy has {len(policy)} steps, CMDP has {cmdp.horizon}")
    out = []
    for h in range(cmdp.horizon):
        if len(policy[h]) != cmdp.n_states(h):
            raise ValueError(f"step {h}: {len(policy[h])} rows for {cmdp.n_states(h)} states")
        rows = []
        for s in range(cmdp.n_states(h)):
            row = validate_policy(policy[h][s], cmdp.n_actions(h, s))
            if interior and not is_interior(row):
                raise ValueError(f"policy row at step {h}, state {s} is not interior")
            rows.append(row)
        out.append(rows)
    return out


def copy_state_policy(policy):
    return [[row.copy() for row in layer] for layer in policy]


def final_state_distribution(cmdp, policy):
    """Forward pass from the start state to the terminal layer."""
    policy = validate_state_policy(cmdp, policy)
    d = np.zeros(cmdp.n_states(0))
    d[cmdp.start_state] = 1.0
    for h in range(cmdp.horizon):
        nxt = np.zeros(cmdp.n_states(h + 1))
        for s in range(cmdp.n_states(h)):
            if d[s] > 0.0:
                nxt += d[s] * (policy[h][s] @ cmdp.transitions[h][s])
        d = nxt
    return d


def terminal_pref_vs_policy(cmdp, s, opponent):
    """Probability that terminal state s beats the opponent's final state."""
    if not 0 <= s < cmdp.n_states(cmdp.horizon):
        raise ValueError(f"terminal state {s} out of range")
    d = final_state_distribution(cmdp, opponent)
    return float(cmdp.terminal_pref[s] @ d)


def q_values(cmdp, policy):
    """Backward induction of Q under self-play: Q[h][s][a] is the probability
    of ending preferred over the policy's own final-state distribution."""
    policy = validate_state_policy(cmdp, policy)
    d = final_state_distribution(cmdp, policy)
    values = cmdp.terminal_pref @ d
    q = [None] * cmdp.horizon
    for h in range(cmdp.horizon - 1, -1, -1):
        q[h] = [cmdp.transitions[h][s] @ values for s in range(cmdp.n_states(h))]
        values = np.array(
            [policy[h][s] @ q[h][s] for s in range(cmdp.n_states(h))]
        )
    return q


def per_state_update(cmdp, current, aux, eta, variant, predictor=None):
    """One self-play iteration of per-state mirror descent.

    omd: every row of `current` takes an md_step on its Q-values; aux is
    returned in lockstep with the new policy.
    onpo: the new policy steps from `aux` on the predictor table (previous
    iteration's Q, zeros at the first iteration), then aux steps from
    itself on the fresh Q-values of that new policy.
    """
    if variant not in ("omd", "onpo"):
        raise ValueError(f"unknown variant {variant!r}")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    current = validate_state_policy(cmdp, current, interior=True)
    if variant == "omd":
        q = q_values(cmdp, current)
        new_current = [
            [md_step(current[h][s], q[h][s], eta) for s in range(cmdp.n_states(h))]
            for h in range(cmdp.horizon)
        ]
        return new_current, copy_state_policy(new_current)
    aux = validate_state_policy(cmdp, aux, interior=True)
    if predictor is None:
        predictor = [
            [np.zeros(cmdp.n_actions(h, s)) for s in range(cmdp.n_states(h))]
            for h in range(cmdp.horizon)
        ]
    new_current = [
        [md_step(aux[h][s], predictor[h][s], eta) for s in range(cmdp.n_states(h))]
        for h in range(cmdp.horizon)
    ]
    q = q_values(cmdp, new_current)
    new_aux = [
        [md_step(aux[h][s], q[h][s], eta) for s in range(cmdp.n_states(h))]
        for h in range(cmdp.horizon)
    ]
    return new_current, new_aux


def exploitability(cmdp, policy):
    """Best opposing win probability against the policy, doubled and shifted.

    Zero exactly when the policy's final-state distribution is a Nash
    strategy of the terminal preference game restricted to reachable play.
    """
    d = final_state_distribution(cmdp, policy)
    values = cmdp.terminal_pref @ d
    for h in range(cmdp.horizon - 1, -1, -1):
        values = np.array(
            [(cmdp.transitions[h][s] @ values).max() for s in range(cmdp.n_states(h))]
        )
    return float(2.0 * values[cmdp.start_state] - 1.0)


@dataclass
class CmdpRunLog:
    """Trace of a per-state self-play run."""

    variant: str
    eta: float
    exploit_last: np.ndarray
    exploit_avg: np.ndarray
    average: list
    final: list


def run_cmdp_selfplay(cmdp, T, eta, variant="omd", start=None):
    """Iterate per_state_update for T rounds, tracking exploitability of the
    last iterate and of the per-state running average."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    current = validate_state_policy(
        cmdp, uniform_state_policy(cmdp) if start is None else start, interior=True
    )
    aux = copy_state_policy(current)
    predictor = None
    acc = [[np.zeros_like(row) for row in layer] for layer in current]
    exploit_last, exploit_avg = [], []
    for t in range(1, T + 1):
        if variant == "onpo":
            # keep the predictor for the next round: Q of the new iterate
            current, aux = per_state_update(cmdp, current, aux, eta, variant, predictor)
            predictor = q_values(cmdp, current)
        else:
            current, aux = per_state_update(cmdp, current, aux, eta, variant)
        for h in range(cmdp.horizon):
            for s in range(cmdp.n_states(h)):
                acc[h][s] += current[h][s]
        avg = [[acc[h][s] / t for s in range(cmdp.n_states(h))] for h in range(cmdp.horizon)]
        exploit_last.append(exploitability(cmdp, current))
        exploit_avg.append(exploitability(cmdp, avg))
    return CmdpRunLog(
        variant=variant,
        eta=float(eta),
        exploit_last=np.array(exploit_last),
        exploit_avg=np.array(exploit_avg),
        average=avg,
        final=current,
    )


def induced_matrix_game(cmdp):
    """For H = 1 with a single decision state: the equivalent preference game
    over actions. Used to cross-check exploitability against duality_gap."""
    if cmdp.horizon != 1 or cmdp.n_states(0) != 1:
        raise ValueError("induced game needs horizon 1 and a single decision state")
    rows = cmdp.transitions[0][cmdp.start_state]
    return validate_game(rows @ cmdp.terminal_pref @ rows.T)
