"""Weighted least squares over pairwise logit differences.

The squared preference losses used here are all of the form

    sum_m  w_m * ((delta[win_m] - delta[lose_m]) - target_m)^2

with delta a logit offset vector. Differences kill the softmax
normalizer, so the losses are convex quadratics in delta and a direct
solve gives the exact minimizer. Gradient descent is kept as a second,
independent route for cross-checking.
"""

from dataclasses import dataclass

import numpy as np

FIT_METHODS = ("direct_least_squares", "gradient_descent")


class FitError(RuntimeError):
    """The inner optimizer failed to reach its gradient tolerance."""


@dataclass
class FitConfig:
    method: str = "direct_least_squares"
    step_size: float = 0.0  # 0 means exact line search
    max_iters: int = 100_000
    grad_tol: float = 1e-8

    def __post_init__(self):
        if self.method not in FIT_METHODS:
            raise ValueError(f"unknown fit method {self.method!r}, expected one of {FIT_METHODS}")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.max_iters < 1 or self.grad_tol <= 0:
            raise ValueError("max_iters and grad_tol must be positive")

    def to_json_dict(self):
        return {
            "method": self.method,
            "step_size": self.step_size,
            "max_iters": self.max_iters,
            "grad_tol": self.grad_tol,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(**d)


def gauge_fix(logits):
    """Shift logits to sum to zero; softmax is unchanged."""
    logits = np.asarray(logits, dtype=float)
    return logits - logits.mean()


def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def pair_design(n, winners, losers):
    """Dense design matrix with rows e_winner - e_loser."""
    winners = np.asarray(winners, dtype=int)
    losers = np.asarray(losers, dtype=int)
    m = len(winners)
    mat = np.zeros((m, n))
    rows = np.arange(m)
    np.add.at(mat, (rows, winners), 1.0)
    np.add.at(mat, (rows, losers), -1.0)
    return mat


def pair_quadratic_loss(delta, design, weights, targets):
    resid = design @ delta - targets
    return float(np.sum(weights * resid * resid))


def solve_pair_quadratic(n, winners, losers, weights, targets, fit=None):
    """Minimize sum_m w_m ((delta_w - delta_l) - target_m)^2 over delta.

    Returns the minimum-norm minimizer, which is orthogonal to the all-ones
    direction because every design row is. Raises FitError if the gradient
    route stalls above its tolerance.
    """
    fit = fit or FitConfig()
    design = pair_design(n, winners, losers)
    weights = np.asarray(weights, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if fit.method == "direct_least_squares":
        sw = np.sqrt(weights)
        delta, *_ = np.linalg.lstsq(design * sw[:, None], targets * sw, rcond=None)
        return delta
    return _gradient_descent(design, weights, targets, fit)


def _gradient_descent(design, weights, targets, fit):
    wd = weights[:, None] * design
    delta = np.zeros(design.shape[1])
    grad = 2.0 * wd.T @ (design @ delta - targets)
    for _ in range(fit.max_iters):
        gnorm = np.abs(grad).max(initial=0.0)
        if gnorm <= fit.grad_tol:
            return delta
        if fit.step_size > 0:
            step = fit.step_size
        else:
            # exact line search on the quadratic: step = g.g / (g.H.g)
            hg = 2.0 * wd.T @ (design @ grad)
            denom = float(grad @ hg)
            if denom <= 0.0:
                return delta  # flat direction, already optimal along it
            step = float(grad @ grad) / denom
        delta = delta - step * grad
        grad = 2.0 * wd.T @ (design @ delta - targets)
    gnorm = float(np.abs(grad).max(initial=0.0))
    if gnorm > fit.grad_tol:
        raise FitError(
            f"gradient descent stalled: |grad|_inf = {gnorm:.3e} > {fit.grad_tol:.1e} "
            f"after {fit.max_iters} iterations"
        )
    return delta
