"""Bandit instances and the collision-channel environment.

Agents and arms are 1-indexed in every public type; 0-based numpy views are
used internally. Rewards are strictly Bernoulli. A round's feedback zeroes
the reward of every agent that shares its pulled arm with another agent,
while hint observations are side draws that never collide.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from ._kernels import profile_utilities
from .errors import (
    DegenerateInstanceError,
    GenerationFailureError,
    InvalidArgumentError,
)

DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class RewardMatrix:
    """Ground-truth Bernoulli mean matrix, one row per agent."""

    means: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        if means.ndim != 2 or means.size == 0:
            raise InvalidArgumentError("means must be a non-empty 2-D array")
        if means.shape[0] > means.shape[1]:
            raise InvalidArgumentError(
                f"need at least as many arms as agents, got shape {means.shape}"
            )
        if np.any(means < 0.0) or np.any(means > 1.0) or not np.all(np.isfinite(means)):
            raise InvalidArgumentError("mean entries must lie in [0, 1]")
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @property
    def num_agents(self) -> int:
        return self.means.shape[0]

    @property
    def num_arms(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "M": self.num_agents,
            "K": self.num_arms,
            "means": self.means.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RewardMatrix":
        means = np.array(payload["means"], dtype=float)
        if "M" in payload and int(payload["M"]) != means.shape[0]:
            raise InvalidArgumentError("M does not match the means row count")
        if "K" in payload and int(payload["K"]) != means.shape[1]:
            raise InvalidArgumentError("K does not match the means column count")
        return cls(means=means, seed=payload.get("seed"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RewardMatrix":
        return cls.from_dict(json.loads(Path(path).read_text()))


class AssignmentProfile:
    """A full agent-to-arm action profile; arms may repeat (collisions)."""

    __slots__ = ("arm_of",)

    def __init__(self, arm_of: Iterable[int]):
        arms = tuple(int(a) for a in arm_of)
        if not arms:
            raise InvalidArgumentError("profile must assign at least one agent")
        if any(a < 1 for a in arms):
            raise InvalidArgumentError("arm indices are 1-based and positive")
        self.arm_of = arms

    def __len__(self) -> int:
        return len(self.arm_of)

    def __eq__(self, other) -> bool:
        return isinstance(other, AssignmentProfile) and self.arm_of == other.arm_of

    def __hash__(self) -> int:
        return hash(self.arm_of)

    def __repr__(self) -> str:
        return f"{type(self).__name__}{self.arm_of}"

    def zero_based(self) -> np.ndarray:
        return np.asarray(self.arm_of, dtype=np.int64) - 1


class Matching(AssignmentProfile):
    """An injective profile: no two agents share an arm."""

    __slots__ = ()

    def __init__(self, arm_of: Iterable[int]):
        super().__init__(arm_of)
        if len(set(self.arm_of)) != len(self.arm_of):
            raise InvalidArgumentError(f"matching must be injective, got {self.arm_of}")


@dataclass(frozen=True)
class RoundOutcome:
    """Feedback for one simulated round."""

    rewards: tuple[int, ...]
    collided: tuple[bool, ...]
    hint_rewards: tuple[int, ...] | None = None


@dataclass(frozen=True)
class InstanceSummary:
    """Exhaustive-enumeration facts about an instance."""

    optimal_matching: Matching
    optimal_utility: float
    min_gap: float


def _check_profile(profile: AssignmentProfile | Sequence[int], matrix: RewardMatrix) -> np.ndarray:
    arms = profile.zero_based() if isinstance(profile, AssignmentProfile) else np.asarray(profile, dtype=np.int64) - 1
    if arms.shape != (matrix.num_agents,):
        raise InvalidArgumentError(
            f"profile length {arms.shape} does not match {matrix.num_agents} agents"
        )
    if np.any(arms < 0) or np.any(arms >= matrix.num_arms):
        raise InvalidArgumentError("profile contains an out-of-range arm")
    return arms


def collision_mask(arms0: np.ndarray) -> np.ndarray:
    """True for each agent whose 0-based arm is shared with another agent."""
    return _kernels.collision_mask_nb(np.ascontiguousarray(arms0, dtype=np.int64))


def utility(profile: AssignmentProfile | Sequence[int], matrix: RewardMatrix) -> float:
    """Expected utility: matched means summed, colliding agents contribute 0."""
    arms0 = _check_profile(profile, matrix)
    shared = collision_mask(arms0)
    rows = np.arange(matrix.num_agents)
    return float(np.sum(matrix.means[rows, arms0] * ~shared))


def draw_round(
    means: np.ndarray,
    pull0: np.ndarray,
    hint0: np.ndarray | None,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Low-level sampler shared by the environment and the simulators.

    Always consumes one uniform per agent for pulls (even collided ones) and,
    when hints are queried, one more per agent, in that order; replays are
    therefore stable under identical seeds.
    """
    num_agents = pull0.shape[0]
    rows = np.arange(num_agents)
    raw = (rng.random(num_agents) < means[rows, pull0]).astype(np.int64)
    shared = collision_mask(pull0)
    rewards = np.where(shared, 0, raw)
    hints = None
    if hint0 is not None:
        hints = (rng.random(num_agents) < means[rows, hint0]).astype(np.int64)
    return rewards, shared, hints


def sample_round(
    matrix: RewardMatrix,
    profile: AssignmentProfile | Sequence[int],
    hint_profile: AssignmentProfile | Sequence[int] | None,
    rng: np.random.Generator,
) -> RoundOutcome:
    """Sample one round of pulls (collision-zeroed) plus optional hint draws.

    Hints are independent draws of the queried arms and never collide, even
    when a hint targets the arm its agent is pulling.
    """
    pull0 = _check_profile(profile, matrix)
    hint0 = None if hint_profile is None else _check_profile(hint_profile, matrix)
    rewards, shared, hints = draw_round(matrix.means, pull0, hint0, rng)
    return RoundOutcome(
        rewards=tuple(int(r) for r in rewards),
        collided=tuple(bool(c) for c in shared),
        hint_rewards=None if hints is None else tuple(int(h) for h in hints),
    )


def summarize(matrix: RewardMatrix, cap: int = DEFAULT_ENUMERATION_CAP) -> InstanceSummary:
    """Find the optimal profile and the runner-up gap by full enumeration.

    Rejects instances whose optimum is not unique (ties within 1e-12), since
    every policy here assumes a single best matching.
    """
    from .matching import enumerate_profiles  # local import to avoid a cycle

    profiles = enumerate_profiles(matrix.num_agents, matrix.num_arms, cap=cap)
    utilities = profile_utilities(matrix.means, np.ascontiguousarray(profiles - 1))
    best_idx = int(np.argmax(utilities))
    best = float(utilities[best_idx])
    utilities[best_idx] = -np.inf
    gap = best - float(np.max(utilities)) if utilities.size > 1 else np.inf
    if utilities.size > 1 and gap <= 1e-12:
        raise DegenerateInstanceError(
            f"optimal profile is not unique (gap {gap:.3g})"
        )
    return InstanceSummary(
        optimal_matching=Matching(profiles[best_idx]),
        optimal_utility=best,
        min_gap=gap,
    )


def generate_instance(
    num_agents: int,
    num_arms: int,
    gap_min: float,
    gap_max: float,
    seed: int,
    max_attempts: int = 10**5,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> RewardMatrix:
    """Rejection-sample a uniform-[0,1] matrix whose minimum gap lands in range."""
    if not (0 < gap_min <= gap_max):
        raise InvalidArgumentError("need 0 < gap_min <= gap_max")
    if num_agents > num_arms:
        raise InvalidArgumentError("need num_agents <= num_arms")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        means = rng.random((num_agents, num_arms))
        matrix = RewardMatrix(means=means, seed=seed)
        try:
            summary = summarize(matrix, cap=cap)
        except DegenerateInstanceError:
            continue
        if gap_min <= summary.min_gap <= gap_max:
            return matrix
    raise GenerationFailureError(
        f"no instance with gap in [{gap_min}, {gap_max}] after {max_attempts} attempts"
    )
