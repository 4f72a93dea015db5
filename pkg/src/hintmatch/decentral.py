"""Round-synchronous decentralized simulation.

Agents coordinate only through collisions: an initialization phase assigns
unique ranks, fixed-length exploration epochs alternate with bit-by-bit
broadcast phases in which each agent shares a quantized differential update
of its own statistics row, and both explore-then-commit variants finish by
committing to a matching and pulling it for the remaining horizon.

The engine advances all agents in lockstep and asserts, every epoch, that
the per-agent reconstructed statistic matrices (and active-edge sets, for
the elimination variant) are identical; any divergence is a protocol bug,
not a recoverable condition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError, ProtocolFailureError
from .instances import Matching, RewardMatrix, collision_mask, draw_round, summarize

RANK_ROUND_CAP = 10**6


# ---------------------------------------------------------------------------
# quantization and differential encoding


def quantization_level(rho: int) -> int:
    """Grid exponent q: epoch-rho values live on the 2**-q lattice."""
    if rho < 1:
        raise InvalidArgumentError("epoch index must be >= 1")
    return math.ceil(math.log2(rho) / 2) if rho > 1 else 0


def quantize(mu_hat: float, rho: int) -> float:
    """Round up to the epoch-rho grid; clamped so values stay within [0, 1].

    Guarantees mu_hat <= result <= mu_hat + 2**-q <= mu_hat + 1/sqrt(rho).
    """
    if not 0.0 <= mu_hat <= 1.0:
        raise InvalidArgumentError("mu_hat must lie in [0, 1]")
    scale = 1 << quantization_level(rho)
    return min(math.ceil(mu_hat * scale), scale) / scale


def bit_width(rho: int) -> int:
    """Signed payload width for the phase that establishes epoch rho.

    One sign bit plus enough magnitude bits for a full-range grid step.
    """
    return quantization_level(rho) + 2


@dataclass(frozen=True)
class CommMessage:
    """One quantized differential statistic in flight."""

    sender_rank: int
    receiver_rank: int
    agent: int
    arm: int
    payload: int
    bit_width: int


def encode_diff(mu_new: float, mu_prev: float, rho: int) -> tuple[int, bool]:
    """Signed grid-unit difference between consecutive quantized values.

    Both inputs must sit on their epochs' grids (the previous grid divides
    the current one, so the difference is an exact integer). Returns the
    payload and a saturation flag; saturation clamps instead of failing.
    """
    scale = 1 << quantization_level(rho)
    payload = round((mu_new - mu_prev) * scale)
    limit = (1 << (bit_width(rho) - 1)) - 1
    if abs(payload) > limit:
        return (limit if payload > 0 else -limit), True
    return payload, False


def decode_diff(mu_prev: float, payload: int, rho: int) -> float:
    """Reconstruct the epoch-rho value from the previous one and a payload."""
    scale = 1 << quantization_level(rho)
    return mu_prev + payload / scale


def payload_bits(payload: int, width: int) -> tuple[int, ...]:
    """Sign bit followed by the magnitude, most-significant bit first."""
    magnitude = abs(payload)
    if magnitude >= (1 << (width - 1)):
        raise InvalidArgumentError("payload does not fit the bit width")
    bits = [1 if payload < 0 else 0]
    for i in range(width - 2, -1, -1):
        bits.append((magnitude >> i) & 1)
    return tuple(bits)


def bits_to_payload(bits: tuple[int, ...] | list[int]) -> int:
    magnitude = 0
    for b in bits[1:]:
        magnitude = (magnitude << 1) | int(b)
    return -magnitude if bits[0] else magnitude


def comm_phase_length(num_agents: int, num_arms: int, rho_new: int) -> int:
    """Rounds consumed broadcasting every agent's row at epoch rho_new."""
    if num_agents <= 1:
        return 0
    return num_agents * (num_agents - 1) * num_arms * bit_width(rho_new)


# ---------------------------------------------------------------------------
# parameters


def hdetc_stop_threshold(num_agents: int, num_arms: int, horizon: int, min_gap: float) -> int:
    """Hint-inquiry cutoff 9 M^2 K ln(2 M T) / gap^2, rounded up."""
    if min_gap <= 0:
        raise InvalidArgumentError("min_gap must be positive")
    return math.ceil(
        9 * num_agents**2 * num_arms * math.log(2 * num_agents * horizon) / min_gap**2
    )


@dataclass(frozen=True)
class EliminationParams:
    """Confidence schedule for the elimination-based variant."""

    num_agents: int
    horizon: int

    @property
    def eta(self) -> float:
        return math.sqrt(2.0 / (self.num_agents * self.horizon**2))

    def epsilon(self, rho: int) -> float:
        """sqrt(ln(2/eta)/rho); strictly decreasing in the epoch index."""
        if rho < 1:
            raise InvalidArgumentError("epoch index must be >= 1")
        return math.sqrt(math.log(2.0 / self.eta) / rho)


# ---------------------------------------------------------------------------
# rank assignment


@dataclass(frozen=True)
class RankAssignmentResult:
    ranks: tuple[int, ...]
    learned_num_agents: tuple[int, ...]
    duration: int
    profiles: np.ndarray  # (duration, M) 0-based pulls, agent order


def run_rank_assignment(
    num_agents: int,
    num_arms: int,
    agent_rngs: list[np.random.Generator],
    max_rounds: int = RANK_ROUND_CAP,
) -> RankAssignmentResult:
    """Collision-driven rank assignment.

    Phase A (orthogonalization) runs blocks of K+1 rounds: in the first slot
    every unfixed agent pulls a uniform arm and fixes on it iff uncollided;
    in the K probe slots unfixed agents sweep arms 1..K while fixed agents
    hold, so a silent probe tells every fixed agent that orthogonalization
    is complete. Phase B (rank conversion) runs K blocks of K rounds: in
    block j the agent fixed on arm j hops through arms 1..K while everyone
    else holds. Each agent marks arm j occupied iff it observed a collision
    during block j (the hopper itself collides on exactly the other occupied
    arms), which yields the full occupied set, hence the agent count and the
    agent's rank among the sorted occupied arms.
    """
    if len(agent_rngs) != num_agents:
        raise InvalidArgumentError("need one generator per agent")
    fixed = np.full(num_agents, -1, dtype=np.int64)
    rows: list[np.ndarray] = []

    while True:
        if (len(rows) + num_arms + 1) > max_rounds:
            raise ProtocolFailureError("rank assignment exceeded the round cap")
        pulls = np.empty(num_agents, dtype=np.int64)
        for m in range(num_agents):
            pulls[m] = fixed[m] if fixed[m] >= 0 else agent_rngs[m].integers(num_arms)
        rows.append(pulls.copy())
        shared = collision_mask(pulls)
        for m in range(num_agents):
            if fixed[m] < 0 and not shared[m]:
                fixed[m] = pulls[m]
        for probe in range(num_arms):
            probe_pulls = np.where(fixed >= 0, np.maximum(fixed, 0), probe)
            rows.append(probe_pulls.astype(np.int64))
        if np.all(fixed >= 0):
            break

    arm_to_agent = {int(fixed[m]): m for m in range(num_agents)}
    observed = [{int(fixed[m])} for m in range(num_agents)]
    for block_arm in range(num_arms):
        hopper = arm_to_agent.get(block_arm)
        for a in range(num_arms):
            pulls = fixed.copy()
            if hopper is not None:
                pulls[hopper] = a
            rows.append(pulls)
            if hopper is not None and a != block_arm and a in arm_to_agent:
                observed[arm_to_agent[a]].add(block_arm)
                observed[hopper].add(a)

    ranks = tuple(sorted(obs).index(int(fixed[m])) + 1 for m, obs in enumerate(observed))
    learned = tuple(len(obs) for obs in observed)
    if sorted(ranks) != list(range(1, num_agents + 1)) or any(n != num_agents for n in learned):
        raise ProtocolFailureError("rank assignment produced inconsistent ranks")
    return RankAssignmentResult(
        ranks=ranks,
        learned_num_agents=learned,
        duration=len(rows),
        profiles=np.array(rows, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# engine


@dataclass
class Segment:
    """A run of rounds with shared phase label and known regret increments."""

    phase: str  # rank | explore | comm | exploit
    length: int
    increments: float | np.ndarray  # scalar => constant per round
    hints_per_round: int = 0


@dataclass
class AgentState:
    """What one agent privately holds between rounds (indexed by rank)."""

    rank: int
    num_agents: int
    num_arms: int
    own_counts: np.ndarray = field(init=False)
    own_sums: np.ndarray = field(init=False)
    shared_num: np.ndarray = field(init=False)  # quantized matrix, grid units
    shared_q: int = field(init=False, default=0)
    active: np.ndarray = field(init=False)  # candidate edges (elimination)

    def __post_init__(self):
        self.own_counts = np.zeros(self.num_arms, dtype=np.int64)
        self.own_sums = np.zeros(self.num_arms, dtype=np.int64)
        self.shared_num = np.zeros((self.num_agents, self.num_arms), dtype=np.int64)
        self.active = np.ones((self.num_agents, self.num_arms), dtype=bool)

    def shared_matrix(self) -> np.ndarray:
        return self.shared_num / float(1 << self.shared_q)

    def own_mu_hat(self) -> np.ndarray:
        out = np.zeros(self.num_arms)
        np.divide(self.own_sums, self.own_counts, out=out, where=self.own_counts > 0)
        return out


@dataclass
class DecentralResult:
    segments: list[Segment]
    horizon: int
    ranks: tuple[int, ...]
    rank_duration: int
    epochs: int
    commit_time: float  # global rounds completed when exploitation began
    stop_epoch: float
    committed: Matching | None  # agent-space arms
    hints_total: int
    comm_rounds: int
    comm_phase_lengths: list[int]
    saturated_messages: int
    messages_total: int
    own_counts: np.ndarray | None = None  # final per-rank observation counts


class DecentralEngine:
    """Lockstep simulator for the two decentralized policies."""

    def __init__(
        self,
        instance: RewardMatrix,
        policy: str,
        horizon: int,
        seed: int,
        gap: float | None = None,
        trace_path: str | None = None,
    ):
        if policy not in ("hdetc", "ebhdetc"):
            raise InvalidArgumentError(f"unknown decentralized policy {policy!r}")
        if horizon < 1:
            raise InvalidArgumentError("horizon must be >= 1")
        if policy == "hdetc" and (gap is None or gap <= 0):
            raise InvalidArgumentError("hdetc needs the known minimum gap (> 0)")
        self.instance = instance
        self.policy = policy
        self.horizon = horizon
        self.gap = gap
        self.seed = seed
        self.trace_path = trace_path
        self._trace_file = None

    # -- trace helpers ----------------------------------------------------

    def _trace(self, t: int, phase: str, agent: int, arm0: int, collided: bool, bit=None):
        if self._trace_file is None:
            return
        row = {"t": t, "phase": phase, "agent": agent + 1, "arm": int(arm0) + 1,
               "collided": bool(collided)}
        if bit is not None:
            row["bit"] = int(bit)
        self._trace_file.write(json.dumps(row) + "\n")

    def _trace_profile(self, t: int, phase: str, pulls0: np.ndarray, by_rank=False):
        if self._trace_file is None:
            return
        shared = collision_mask(pulls0)
        for a in range(pulls0.shape[0]):
            agent = int(self._rank_to_agent[a]) if by_rank else a
            self._trace(t, phase, agent, pulls0[a], shared[a])

    # -- main loop --------------------------------------------------------

    def run(self) -> DecentralResult:
        if self.trace_path is not None:
            self._trace_file = open(self.trace_path, "w")
        try:
            return self._run()
        finally:
            if self._trace_file is not None:
                self._trace_file.close()
                self._trace_file = None

    def _run(self) -> DecentralResult:
        instance = self.instance
        num_agents, num_arms = instance.num_agents, instance.num_arms
        horizon = self.horizon
        summary = summarize(instance)
        ustar = summary.optimal_utility

        seq = np.random.SeedSequence(self.seed)
        children = seq.spawn(num_agents + 1)
        env_rng = np.random.default_rng(children[0])
        agent_rngs = [np.random.default_rng(c) for c in children[1:]]

        segments: list[Segment] = []
        hints_total = 0
        comm_rounds = 0
        comm_phase_lengths: list[int] = []
        saturated = 0
        messages = 0

        # initialization phase
        ra = run_rank_assignment(num_agents, num_arms, agent_rngs)
        rank_used = min(ra.duration, horizon)
        rank_utils = _kernels.profile_utilities(instance.means, ra.profiles[:rank_used])
        segments.append(Segment("rank", rank_used, ustar - rank_utils))
        if self._trace_file is not None:
            for i in range(rank_used):
                self._trace_profile(i + 1, "rank", ra.profiles[i])
        t = rank_used

        # rank-space view: row r is the agent holding rank r+1
        agent_of_rank = np.argsort(np.asarray(ra.ranks))
        self._rank_to_agent = agent_of_rank
        means_r = np.ascontiguousarray(instance.means[agent_of_rank])
        rows = np.arange(num_agents)
        no_ban = np.zeros((num_agents, num_arms), dtype=bool)

        agents = [AgentState(rank=r + 1, num_agents=num_agents, num_arms=num_arms)
                  for r in range(num_agents)]

        rho = 0
        stop_threshold = None
        elimination = None
        if self.policy == "hdetc":
            stop_threshold = hdetc_stop_threshold(num_agents, num_arms, horizon, self.gap)
        else:
            elimination = EliminationParams(num_agents=num_agents, horizon=horizon)

        committed_cols = None
        while t < horizon:
            if self.policy == "hdetc" and (t - rank_used) >= stop_threshold:
                committed_cols = self._common_best(agents, no_ban)
                break
            if self.policy == "ebhdetc" and int(agents[0].active.sum()) == num_agents:
                committed_cols = self._commit_from_active(agents, no_ban)
                break

            epoch_cols = self._common_best(agents, no_ban)
            epoch_util = float(means_r[rows, epoch_cols].sum())
            explore_n = min(num_arms, horizon - t)
            for _ in range(explore_n):
                round_no = t + 1
                shift = round_no % num_arms
                hint0 = (rows + shift) % num_arms
                rewards, shared, hint_draws = draw_round(means_r, epoch_cols, hint0, env_rng)
                if shared.any():
                    raise ProtocolFailureError("collision during exploration")
                for r in range(num_agents):
                    state = agents[r]
                    state.own_counts[epoch_cols[r]] += 1
                    state.own_sums[epoch_cols[r]] += rewards[r]
                    state.own_counts[hint0[r]] += 1
                    state.own_sums[hint0[r]] += hint_draws[r]
                if self._trace_file is not None:
                    self._trace_profile(round_no, "explore", epoch_cols, by_rank=True)
                t += 1
            segments.append(Segment("explore", explore_n, ustar - epoch_util,
                                    hints_per_round=num_agents))
            hints_total += num_agents * explore_n
            if explore_n < num_arms or t >= horizon:
                break

            # broadcast phase establishing epoch rho+1
            rho_new = rho + 1
            phase_len = comm_phase_length(num_agents, num_arms, rho_new)
            comm_phase_lengths.append(phase_len)
            sat, msg, counted = self._broadcast(
                agents, rho_new, epoch_cols, means_r, ustar, epoch_util,
                t, horizon, segments)
            saturated += sat
            messages += msg
            comm_rounds += counted
            t += counted
            if counted < phase_len:
                break
            rho = rho_new

            if self.policy == "ebhdetc":
                self._update_active(agents, elimination, rho, no_ban)

        committed = None
        commit_time = math.nan
        stop_epoch = math.nan
        if committed_cols is not None:
            commit_time = float(t)
            stop_epoch = float(rho)
            agent_arms = np.empty(num_agents, dtype=np.int64)
            agent_arms[agent_of_rank] = committed_cols + 1
            committed = Matching(agent_arms)
            remaining = horizon - t
            if remaining > 0:
                inc = ustar - float(means_r[rows, committed_cols].sum())
                segments.append(Segment("exploit", remaining, inc))
                if self._trace_file is not None:
                    for i in range(remaining):
                        self._trace_profile(t + i + 1, "exploit", committed_cols, by_rank=True)
                t = horizon

        return DecentralResult(
            segments=segments,
            horizon=horizon,
            ranks=ra.ranks,
            rank_duration=ra.duration,
            epochs=rho,
            commit_time=commit_time,
            stop_epoch=stop_epoch,
            committed=committed,
            hints_total=hints_total,
            comm_rounds=comm_rounds,
            comm_phase_lengths=comm_phase_lengths,
            saturated_messages=saturated,
            messages_total=messages,
            own_counts=np.stack([state.own_counts for state in agents]),
        )

    # -- helpers ----------------------------------------------------------

    def _common_best(self, agents: list[AgentState], no_ban: np.ndarray) -> np.ndarray:
        """Each agent solves on its own matrix; all must agree exactly."""
        cols = None
        for state in agents:
            own_cols, feasible = _kernels.lex_best_cols(state.shared_matrix(), no_ban)
            if not feasible:
                raise ProtocolFailureError("infeasible matching during simulation")
            if cols is None:
                cols = own_cols
            elif not np.array_equal(cols, own_cols):
                raise ProtocolFailureError("agents disagree on the epoch matching")
        if np.unique(cols).shape[0] != cols.shape[0]:
            raise ProtocolFailureError("epoch matching is not injective")
        return cols

    def _commit_from_active(self, agents: list[AgentState], no_ban: np.ndarray) -> np.ndarray:
        """Stop rule reached: the surviving edges must form the best matching."""
        active = agents[0].active
        cols = np.full(active.shape[0], -1, dtype=np.int64)
        for m0 in range(active.shape[0]):
            arms = np.flatnonzero(active[m0])
            if arms.shape[0] != 1:
                raise ProtocolFailureError("active edges do not form a matching")
            cols[m0] = arms[0]
        if np.unique(cols).shape[0] != cols.shape[0]:
            raise ProtocolFailureError("active edges do not form a matching")
        best = self._common_best(agents, no_ban)
        if not np.array_equal(best, cols):
            raise ProtocolFailureError("active edges disagree with the best matching")
        return cols

    def _broadcast(
        self,
        agents: list[AgentState],
        rho_new: int,
        epoch_cols: np.ndarray,
        means_r: np.ndarray,
        ustar: float,
        epoch_util: float,
        t_start: int,
        horizon: int,
        segments: list[Segment],
    ) -> tuple[int, int, int]:
        """Bit-by-bit differential broadcast of every agent's own row.

        Senders take rank order; for bit 1 the sender pulls the receiver's
        committed arm (forcing a collision the receiver reads as a 1), for
        bit 0 it pulls its own; everyone else holds. Returns (saturated,
        messages, rounds counted within the horizon).
        """
        num_agents = len(agents)
        num_arms = agents[0].num_arms
        q_new = quantization_level(rho_new)
        width = bit_width(rho_new)
        limit = (1 << (width - 1)) - 1
        saturated = 0
        messages = 0

        # each agent quantizes its own row and prepares its payloads
        scale = 1 << q_new
        payloads = np.empty((num_agents, num_arms), dtype=np.int64)
        new_own_nums = []
        for r, state in enumerate(agents):
            shift = q_new - state.shared_q
            prev_own = state.shared_num[r] << shift
            mu = state.own_mu_hat()
            new_own = np.minimum(np.ceil(mu * scale).astype(np.int64), scale)
            if np.any(new_own / scale < mu) or np.any(
                new_own / scale > mu + 1.0 / math.sqrt(rho_new) + 1e-12
            ):
                raise ProtocolFailureError("quantization left its error envelope")
            delta = new_own - prev_own
            clipped = np.clip(delta, -limit, limit)
            saturated += int(np.sum(clipped != delta))
            payloads[r] = clipped
            new_own_nums.append(prev_own + clipped)

        bits = np.empty((num_agents, num_arms, width), dtype=np.int64)
        for r in range(num_agents):
            for k in range(num_arms):
                bits[r, k] = payload_bits(int(payloads[r, k]), width)

        # every receiver decodes every (sender, arm) payload
        for r, state in enumerate(agents):
            shift = q_new - state.shared_q
            rebuilt = state.shared_num << shift
            for s in range(num_agents):
                if s == r:
                    continue
                for k in range(num_arms):
                    decoded = bits_to_payload(bits[s, k])
                    if decoded != payloads[s, k]:
                        raise ProtocolFailureError("bit channel corrupted a payload")
                    rebuilt[s, k] += decoded
                    messages += 1
            rebuilt[r] = new_own_nums[r]
            state.shared_num = rebuilt
            state.shared_q = q_new

        reference = agents[0].shared_num
        for state in agents[1:]:
            if state.shared_q != q_new or not np.array_equal(state.shared_num, reference):
                raise ProtocolFailureError("agents reconstructed different matrices")

        # per-round regret increments, ordered (sender, arm, receiver, bit)
        phase_len = comm_phase_length(num_agents, num_arms, rho_new)
        counted = min(phase_len, horizon - t_start)
        if phase_len == 0:
            return saturated, messages, 0
        base = ustar - epoch_util
        incs = np.empty(phase_len)
        pos = 0
        t_round = t_start
        for s in range(num_agents):
            mean_s = means_r[s, epoch_cols[s]]
            for k in range(num_arms):
                bvec = bits[s, k].astype(float)
                for r in range(num_agents):
                    if r == s:
                        continue
                    extra = mean_s + means_r[r, epoch_cols[r]]
                    incs[pos:pos + width] = base + bvec * extra
                    if self._trace_file is not None:
                        for i in range(width):
                            t_round += 1
                            if t_round > horizon:
                                continue
                            self._trace_comm_round(
                                t_round, s, r, int(bits[s, k, i]), epoch_cols)
                    pos += width
        segments.append(Segment("comm", counted, incs if counted == phase_len else incs[:counted].copy()))
        return saturated, messages, counted

    def _trace_comm_round(self, t, sender, receiver, bit, epoch_cols):
        num_agents = epoch_cols.shape[0]
        for rank0 in range(num_agents):
            agent = int(self._rank_to_agent[rank0])
            if rank0 == sender:
                arm = epoch_cols[receiver] if bit else epoch_cols[sender]
                self._trace(t, "comm", agent, arm, bool(bit), bit)
            elif rank0 == receiver:
                self._trace(t, "comm", agent, epoch_cols[rank0], bool(bit), bit)
            else:
                self._trace(t, "comm", agent, epoch_cols[rank0], False)

    def _update_active(self, agents, elimination, rho, no_ban):
        """Keep an edge iff forcing it costs at most 4*M*epsilon(rho)."""
        num_agents = len(agents)
        threshold = 4 * num_agents * elimination.epsilon(rho)
        reference = None
        for state in agents:
            weights = state.shared_matrix()
            best_cols, _ = _kernels.lex_best_cols(weights, no_ban)
            best_val = float(weights[np.arange(num_agents), best_cols].sum())
            new_active = np.zeros_like(state.active)
            for m0, k0 in np.argwhere(state.active):
                forced = weights[m0, k0] + self._reduced_value(weights, m0, k0)
                if best_val - forced <= threshold:
                    new_active[m0, k0] = True
            state.active = new_active
            if reference is None:
                reference = new_active
            elif not np.array_equal(reference, new_active):
                raise ProtocolFailureError("agents disagree on the active edges")

    @staticmethod
    def _reduced_value(weights: np.ndarray, drop_row: int, drop_col: int) -> float:
        if weights.shape[0] == 1:
            return 0.0
        keep_rows = [r for r in range(weights.shape[0]) if r != drop_row]
        keep_cols = [c for c in range(weights.shape[1]) if c != drop_col]
        sub = np.ascontiguousarray(weights[np.ix_(keep_rows, keep_cols)])
        value, feasible = _kernels._masked_max_value(sub, np.zeros(sub.shape, dtype=bool))
        if not feasible:
            raise ProtocolFailureError("reduced matching infeasible")
        return float(value)
