"""Bernoulli KL divergence and kl-UCB upper-confidence indices.

Natural logarithms throughout; the exploration rate is log t + 4 log log t,
clamped to zero below t = 3 where log log is undefined or negative.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError


def kl_bernoulli(p: float, q: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q).

    Uses the 0*log 0 = 0 convention and returns +inf when q is degenerate
    (0 or 1) while p is not.
    """
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise InvalidArgumentError("kl_bernoulli arguments must lie in [0, 1]")
    return float(_kernels.kl_bernoulli_nb(p, q))


def exploration_rate(t: int) -> float:
    """log t + 4 log log t for t >= 3; 0 for the first two rounds."""
    if t < 1:
        raise InvalidArgumentError("time must be >= 1")
    if t < 3:
        return 0.0
    return max(0.0, math.log(t) + 4.0 * math.log(math.log(t)))


def klucb_index(empirical_mean: float, pulls: int, t: int) -> float:
    """Largest mean q in [0, 1] consistent with (mean, pulls) at level f(t).

    Solved by bisection on [mean, 1] to 1e-9 absolute tolerance (64 halvings
    max). An unsampled edge has a vacuous constraint, so its index is 1.
    """
    if not 0.0 <= empirical_mean <= 1.0:
        raise InvalidArgumentError("empirical_mean must lie in [0, 1]")
    if pulls < 0:
        raise InvalidArgumentError("pulls must be nonnegative")
    return float(_kernels.klucb_bisect(empirical_mean, pulls, exploration_rate(t)))


def profile_index(mean_per_agent: float, pulls: int, t: int, num_agents: int) -> float:
    """Whole-profile index on the [0, M] utility scale.

    Profile utilities are normalized by the agent count before the Bernoulli
    kl solve and the index is rescaled back, which keeps the solve inside the
    [0, 1] domain and only tightens the confidence region (the kl scaling
    inequality kl(p/n, q/n) <= kl(p, q)/n).
    """
    if num_agents < 1:
        raise InvalidArgumentError("num_agents must be >= 1")
    return num_agents * klucb_index(mean_per_agent, pulls, t)


def klucb_indices(mu_hat: np.ndarray, pulls: np.ndarray, t: int) -> np.ndarray:
    """Per-edge indices for a whole matrix of statistics at once."""
    mu = np.ascontiguousarray(mu_hat, dtype=float)
    n = np.ascontiguousarray(pulls, dtype=np.int64)
    if mu.shape != n.shape:
        raise InvalidArgumentError("mu_hat and pulls shapes differ")
    out = np.empty_like(mu)
    _kernels.klucb_matrix(mu, n, exploration_rate(t), out)
    return out
