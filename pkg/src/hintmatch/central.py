"""Centralized hinted learning policies.

The three policies share one per-round skeleton: pull the empirically best
action, then compare the optimistic (kl-UCB) value of the best *alternative*
action against the incumbent's empirical value, querying a hint while the
alternative still looks plausibly better. They differ in the statistics they
keep (whole profiles vs. edges) and in the hint graph they query:

- hcla:   profile-level statistics; hints the optimistic profile or a
          uniformly random profile, half/half.
- ghcla:  edge-level statistics; hints the optimistic matching or a uniform
          covering matching, half/half.
- gphcla: edge-level statistics; projects the optimistic matching onto the
          covering matching holding its least-observed edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError
from .instances import (
    AssignmentProfile,
    Matching,
    RewardMatrix,
    RoundOutcome,
    collision_mask,
)
from .klucb import exploration_rate
from .matching import (
    CoveringSet,
    covering_index,
    covering_matchings,
    enumerate_profiles,
)


class EdgeStats:
    """Per-edge observation counters and 1-reward sums."""

    def __init__(self, num_agents: int, num_arms: int):
        self.num_agents = num_agents
        self.num_arms = num_arms
        self.counts = np.zeros((num_agents, num_arms), dtype=np.int64)
        self.sums = np.zeros((num_agents, num_arms), dtype=np.int64)

    def mu_hat(self) -> np.ndarray:
        """Empirical means; unobserved edges report 0."""
        out = np.zeros((self.num_agents, self.num_arms))
        np.divide(self.sums, self.counts, out=out, where=self.counts > 0)
        return out


class ProfileStats:
    """Per-profile pull/hint counters and realized-utility sums."""

    def __init__(self, num_agents: int, num_arms: int):
        self.num_agents = num_agents
        self.num_arms = num_arms
        self.counts: dict[tuple[int, ...], int] = {}
        self.utility_sums: dict[tuple[int, ...], float] = {}

    def record(self, profile: tuple[int, ...], realized_utility: float) -> None:
        self.counts[profile] = self.counts.get(profile, 0) + 1
        self.utility_sums[profile] = self.utility_sums.get(profile, 0.0) + realized_utility


@dataclass
class PolicyDecision:
    """One round's pull plus the hint graph, when the hint condition fired."""

    pull: AssignmentProfile
    hint: AssignmentProfile | None = None


def _profile_row(profile: tuple[int, ...], num_arms: int) -> int:
    row = 0
    for arm in profile:
        row = row * num_arms + (arm - 1)
    return row


def hcla_step(
    stats: ProfileStats,
    t: int,
    rng: np.random.Generator,
    hints_enabled: bool = True,
) -> PolicyDecision:
    """Profile-level step: argmax empirical profile vs. best-alternative index.

    Profile empirical utilities live on [0, M]; the kl-UCB solve runs on the
    M-normalized mean and is rescaled back.
    """
    num_agents, num_arms = stats.num_agents, stats.num_arms
    profiles = enumerate_profiles(num_agents, num_arms)
    n = profiles.shape[0]
    mu = np.zeros(n)
    d = np.full(n, float(num_agents))
    rate = exploration_rate(t)
    for profile, count in stats.counts.items():
        row = _profile_row(profile, num_arms)
        mean = stats.utility_sums[profile] / count
        mu[row] = mean
        d[row] = num_agents * _kernels.klucb_bisect(mean / num_agents, count, rate)

    pull_row = int(np.argmax(mu))
    hint = None
    if hints_enabled and n > 1:
        d_alt = d.copy()
        d_alt[pull_row] = -np.inf
        alt_row = int(np.argmax(d_alt))
        if d[alt_row] > mu[pull_row]:
            random_row = int(rng.integers(n))
            use_optimistic = rng.random() < 0.5
            hint_row = alt_row if use_optimistic else random_row
            hint = AssignmentProfile(profiles[hint_row])
    return PolicyDecision(pull=AssignmentProfile(profiles[pull_row]), hint=hint)


def _edge_step(
    stats: EdgeStats,
    covering: CoveringSet,
    t: int,
    rng: np.random.Generator,
    project: bool,
    hints_enabled: bool,
) -> PolicyDecision:
    num_arms = stats.num_arms
    pull_cols, pull_value, alt_cols, alt_value, found = _kernels.edge_step_core(
        stats.counts, stats.sums, exploration_rate(t))

    hint = None
    if hints_enabled and found and alt_value > pull_value:
        if project:
            edge_counts = stats.counts[np.arange(stats.num_agents), alt_cols]
            agent0 = int(np.argmin(edge_counts))  # first min: smallest agent
            shift = covering_index(agent0 + 1, int(alt_cols[agent0]) + 1, num_arms)
            preferred = covering[shift]
        else:
            preferred = Matching(alt_cols + 1)
        random_pick = covering[int(rng.integers(num_arms)) + 1]
        hint = preferred if rng.random() < 0.5 else random_pick
    return PolicyDecision(pull=Matching(pull_cols + 1), hint=hint)


def ghcla_step(
    stats: EdgeStats,
    covering: CoveringSet,
    t: int,
    rng: np.random.Generator,
    hints_enabled: bool = True,
) -> PolicyDecision:
    """Edge-level step that hints the optimistic matching itself."""
    return _edge_step(stats, covering, t, rng, project=False, hints_enabled=hints_enabled)


def gphcla_step(
    stats: EdgeStats,
    covering: CoveringSet,
    t: int,
    rng: np.random.Generator,
    hints_enabled: bool = True,
) -> PolicyDecision:
    """Edge-level step that projects the hint onto the covering family.

    The covering matching containing the least-observed edge of the
    optimistic matching is preferred; ties between edges break toward the
    smallest (agent, arm) pair.
    """
    return _edge_step(stats, covering, t, rng, project=True, hints_enabled=hints_enabled)


_EMPTY = np.zeros(0, dtype=np.int64)


def apply_edge_arrays(
    stats: EdgeStats,
    pull0: np.ndarray,
    rewards: np.ndarray,
    collided: np.ndarray,
    hint0: np.ndarray | None,
    hint_rewards: np.ndarray | None,
) -> None:
    """Array-based update shared by apply_observations and the hot runner."""
    _kernels.apply_edge_observations_nb(
        stats.counts, stats.sums, pull0, rewards, collided,
        hint0 is not None,
        _EMPTY if hint0 is None else hint0,
        _EMPTY if hint_rewards is None else hint_rewards,
    )


def apply_observations(
    stats: EdgeStats | ProfileStats,
    decision: PolicyDecision,
    outcome: RoundOutcome,
) -> None:
    """Fold one round of feedback into the policy statistics.

    Edge statistics: the pulled edge counts only when the pull was not
    collided; hinted edges count unconditionally. Profile statistics: the
    pulled profile absorbs the realized utility, the hinted profile absorbs
    the summed hint draws; no other profile is touched.
    """
    num_agents = len(decision.pull)
    if len(outcome.rewards) != num_agents or len(outcome.collided) != num_agents:
        raise InvalidArgumentError("outcome does not match the decision shape")
    if (outcome.hint_rewards is None) != (decision.hint is None):
        raise InvalidArgumentError("hint feedback must match the hint decision")

    if isinstance(stats, EdgeStats):
        apply_edge_arrays(
            stats,
            decision.pull.zero_based(),
            np.asarray(outcome.rewards, dtype=np.int64),
            np.asarray(outcome.collided, dtype=bool),
            None if decision.hint is None else decision.hint.zero_based(),
            None if outcome.hint_rewards is None
            else np.asarray(outcome.hint_rewards, dtype=np.int64),
        )
    elif isinstance(stats, ProfileStats):
        # profile statistics estimate expected *utility*, so the collision
        # indicator applies to hint observations as well: agents sharing an
        # arm inside the hinted profile contribute nothing
        stats.record(decision.pull.arm_of, float(sum(outcome.rewards)))
        if decision.hint is not None:
            shared = collision_mask(decision.hint.zero_based())
            value = float(sum(r for r, s in zip(outcome.hint_rewards, shared) if not s))
            stats.record(decision.hint.arm_of, value)
    else:
        raise InvalidArgumentError(f"unsupported stats type {type(stats)!r}")


class _PolicyBase:
    name = ""

    def step(self, t: int, rng: np.random.Generator) -> PolicyDecision:
        raise NotImplementedError

    def update(self, decision: PolicyDecision, outcome: RoundOutcome) -> None:
        apply_observations(self.stats, decision, outcome)

    def update_arrays(self, decision, pull0, rewards, collided, hint0, hint_rewards) -> None:
        """Hot-path update; equivalent to update() on the matching outcome."""
        outcome = RoundOutcome(
            rewards=tuple(int(r) for r in rewards),
            collided=tuple(bool(c) for c in collided),
            hint_rewards=None if hint_rewards is None
            else tuple(int(h) for h in hint_rewards),
        )
        apply_observations(self.stats, decision, outcome)


class HclaPolicy(_PolicyBase):
    """Super-arm policy over all K^M profiles."""

    name = "hcla"

    def __init__(self, instance: RewardMatrix, hints_enabled: bool = True):
        self.stats = ProfileStats(instance.num_agents, instance.num_arms)
        self.hints_enabled = hints_enabled
        # fail fast if the profile space is not enumerable
        enumerate_profiles(instance.num_agents, instance.num_arms)

    def step(self, t, rng):
        return hcla_step(self.stats, t, rng, self.hints_enabled)


class GHclaPolicy(_PolicyBase):
    name = "ghcla"

    def __init__(self, instance: RewardMatrix, hints_enabled: bool = True):
        self.stats = EdgeStats(instance.num_agents, instance.num_arms)
        self.covering = covering_matchings(instance.num_agents, instance.num_arms)
        self.hints_enabled = hints_enabled

    def step(self, t, rng):
        return ghcla_step(self.stats, self.covering, t, rng, self.hints_enabled)

    def update_arrays(self, decision, pull0, rewards, collided, hint0, hint_rewards):
        apply_edge_arrays(self.stats, pull0, rewards, collided, hint0, hint_rewards)


class GPHclaPolicy(GHclaPolicy):
    name = "gphcla"

    def step(self, t, rng):
        return gphcla_step(self.stats, self.covering, t, rng, self.hints_enabled)


CENTRAL_POLICIES = {
    "hcla": HclaPolicy,
    "ghcla": GHclaPolicy,
    "gphcla": GPHclaPolicy,
}
