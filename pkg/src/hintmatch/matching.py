"""Maximum-weight bipartite matching and enumeration oracles.

All solvers break ties toward the lexicographically smallest arm vector by
comparing candidate solutions, never by perturbing weights, so independent
callers starting from equal inputs always agree on the result.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError, TooLargeError
from .instances import Matching, RewardMatrix

DEFAULT_ENUMERATION_CAP = 10**6


def _check_weights(weights) -> np.ndarray:
    w = np.ascontiguousarray(weights, dtype=float)
    if w.ndim != 2 or w.size == 0:
        raise InvalidArgumentError("weights must be a non-empty 2-D array")
    if w.shape[0] > w.shape[1]:
        raise InvalidArgumentError("need at least as many arms as agents")
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("weights must be finite")
    return w


_NO_BAN_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _no_ban(shape: tuple[int, int]) -> np.ndarray:
    mask = _NO_BAN_CACHE.get(shape)
    if mask is None:
        mask = np.zeros(shape, dtype=bool)
        mask.setflags(write=False)
        _NO_BAN_CACHE[shape] = mask
    return mask


def hungarian_cols(weights: np.ndarray) -> np.ndarray:
    """0-based arm per agent for the lexicographically-smallest max matching."""
    cols, feasible = _kernels.lex_best_cols(weights, _no_ban(weights.shape))
    if not feasible:
        raise InvalidArgumentError("assignment problem is infeasible")
    return cols


def hungarian(weights) -> Matching:
    """Maximum-total-weight injective assignment of agents to arms."""
    w = _check_weights(weights)
    return Matching(hungarian_cols(w) + 1)


def hungarian_excluding(weights, drop_agent: int, drop_arm: int) -> list[tuple[int, int]]:
    """Solve the problem with one agent row and one arm column removed.

    Returns the sub-matching as (agent, arm) pairs in the original 1-based
    labels; the caller re-attaches the dropped pair if desired.
    """
    w = _check_weights(weights)
    num_agents, num_arms = w.shape
    if not (1 <= drop_agent <= num_agents and 1 <= drop_arm <= num_arms):
        raise InvalidArgumentError("drop indices out of range")
    keep_rows = [r for r in range(num_agents) if r != drop_agent - 1]
    keep_cols = [c for c in range(num_arms) if c != drop_arm - 1]
    if not keep_rows:
        return []
    sub = np.ascontiguousarray(w[np.ix_(keep_rows, keep_cols)])
    cols = hungarian_cols(sub)
    return [(keep_rows[i] + 1, keep_cols[cols[i]] + 1) for i in range(len(keep_rows))]


def second_best_matching(weights, incumbent: Matching) -> tuple[Matching, float]:
    """Best matching distinct from the incumbent, with its total weight."""
    w = _check_weights(weights)
    inc0 = incumbent.zero_based()
    if inc0.shape[0] != w.shape[0]:
        raise InvalidArgumentError("incumbent does not match the weight shape")
    cols, value, found = _kernels.best_cols_excluding_assignment(w, inc0)
    if not found:
        raise InvalidArgumentError("no matching other than the incumbent exists")
    return Matching(cols + 1), float(value)


def matching_value(weights: np.ndarray, cols0: np.ndarray) -> float:
    return float(weights[np.arange(cols0.shape[0]), cols0].sum())


@dataclass(frozen=True)
class CoveringSet:
    """K pairwise edge-disjoint matchings that jointly cover every edge."""

    matchings: tuple[Matching, ...]

    def __len__(self) -> int:
        return len(self.matchings)

    def __getitem__(self, index_1based: int) -> Matching:
        return self.matchings[index_1based - 1]

    def __iter__(self):
        return iter(self.matchings)


def covering_arm0(agent0: int, shift0: int, num_arms: int) -> int:
    """0-based arm of 0-based agent in the shift0-th covering matching."""
    return (agent0 + shift0) % num_arms


def covering_index(agent: int, arm: int, num_arms: int) -> int:
    """1-based index of the unique covering matching containing (agent, arm)."""
    return (arm - agent) % num_arms + 1


@lru_cache(maxsize=None)
def covering_matchings(num_agents: int, num_arms: int) -> CoveringSet:
    """The rotation family: matching i pairs agent m with arm ((m+i-2) mod K)+1."""
    if num_agents > num_arms or num_agents < 1:
        raise InvalidArgumentError("need 1 <= num_agents <= num_arms")
    matchings = []
    for shift0 in range(num_arms):
        arms = [covering_arm0(m0, shift0, num_arms) + 1 for m0 in range(num_agents)]
        matchings.append(Matching(arms))
    return CoveringSet(matchings=tuple(matchings))


@lru_cache(maxsize=None)
def _profiles_cached(num_agents: int, num_arms: int) -> np.ndarray:
    grids = np.indices((num_arms,) * num_agents).reshape(num_agents, -1).T
    out = (grids + 1).astype(np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _matchings_cached(num_agents: int, num_arms: int) -> np.ndarray:
    rows = list(itertools.permutations(range(1, num_arms + 1), num_agents))
    out = np.array(rows, dtype=np.int64)
    out.setflags(write=False)
    return out


def enumerate_profiles(
    num_agents: int, num_arms: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> np.ndarray:
    """All K^M profiles in lexicographic order, one 1-based arm row each."""
    if num_agents < 1 or num_arms < 1:
        raise InvalidArgumentError("need positive agent and arm counts")
    if num_arms**num_agents > cap:
        raise TooLargeError(
            f"{num_arms}^{num_agents} profiles exceed the cap of {cap}"
        )
    return _profiles_cached(num_agents, num_arms)


def enumerate_matchings(
    num_agents: int, num_arms: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> np.ndarray:
    """All K!/(K-M)! injective profiles in lexicographic order."""
    if num_agents < 1 or num_agents > num_arms:
        raise InvalidArgumentError("need 1 <= num_agents <= num_arms")
    count = 1
    for i in range(num_agents):
        count *= num_arms - i
    if count > cap:
        raise TooLargeError(f"{count} matchings exceed the cap of {cap}")
    return _matchings_cached(num_agents, num_arms)


def preference_ranks(matching: Matching, matrix: RewardMatrix) -> list[int]:
    """Rank of each agent's matched arm in its descending-sorted mean row.

    Rank 1 is the agent's best arm; ties in means share the better rank.
    """
    arms0 = matching.zero_based()
    ranks = []
    for m0, a0 in enumerate(arms0):
        row = matrix.means[m0]
        ranks.append(1 + int(np.sum(row > row[a0])))
    return ranks


def is_level_ordered(matching: Matching, matrix: RewardMatrix) -> bool:
    """Whether some agent ordering puts the j-th agent within its top-j arms.

    Greedy test: fill level j with the unused agent of smallest rank. Any
    greedy choice is safe because the eligibility sets are nested in j (an
    agent eligible early stays eligible later), so sorting the ranks and
    checking rank_(j) <= j decides the existential form exactly.
    """
    if len(matching) != matrix.num_agents:
        raise InvalidArgumentError("matching does not cover every agent")
    ranks = sorted(preference_ranks(matching, matrix))
    return all(rank <= level for level, rank in enumerate(ranks, start=1))


def is_level_ordered_exhaustive(matching: Matching, matrix: RewardMatrix) -> bool:
    """Permutation-search variant of is_level_ordered, for cross-checks."""
    ranks = preference_ranks(matching, matrix)
    num_agents = len(ranks)
    if num_agents > 6:
        raise TooLargeError("exhaustive level check limited to 6 agents")
    for order in itertools.permutations(range(num_agents)):
        if all(ranks[agent] <= level for level, agent in enumerate(order, start=1)):
            return True
    return False
