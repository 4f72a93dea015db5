"""Experiment runner: replications, regret decomposition, CSV emission.

Regret is pseudo-regret: each round contributes the optimal expected utility
minus the true expected utility of the realized (possibly colliding)
profile. Rounds are phase-labeled (rank / explore / comm / exploit) and the
decomposition is exact; exploitation rounds count toward the exploration
bucket, matching the usual explore-then-commit accounting.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .central import CENTRAL_POLICIES
from .decentral import DecentralEngine, Segment
from .errors import InvalidArgumentError
from .instances import (
    InstanceSummary,
    RewardMatrix,
    draw_round,
    summarize,
    utility,
)
from .klucb import kl_bernoulli

DECENTRAL_POLICIES = ("hdetc", "ebhdetc")
ALL_POLICIES = tuple(CENTRAL_POLICIES) + DECENTRAL_POLICIES

CSV_COLUMNS = [
    "policy", "M", "K", "gap", "T", "t", "reps",
    "regret_mean", "regret_stderr", "regret_rank", "regret_exp", "regret_com",
    "hints_mean", "hints_stderr", "comm_rounds_mean", "stop_time_mean",
]

_PHASE_BUCKET = {"rank": "rank", "explore": "exp", "comm": "com", "exploit": "exp"}


def checkpoint_grid(horizon: int) -> np.ndarray:
    """Geometric sqrt(10)-spaced checkpoints from 100 up, plus the horizon."""
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    points = {horizon}
    exponent = 4
    while True:
        value = round(10 ** (exponent / 2))
        if value >= horizon:
            break
        points.add(value)
        exponent += 1
    return np.array(sorted(points), dtype=np.int64)


@dataclass
class ExperimentConfig:
    instance: RewardMatrix
    policy: str
    horizon: int
    replications: int
    base_seed: int
    gap: float | None = None          # hdetc's known minimum gap
    hints_enabled: bool = True        # disable for the no-hint ablation
    workers: int | None = None
    trace_path: str | None = None
    extra_checkpoints: tuple[int, ...] = ()  # merged into the geometric grid

    def validate(self) -> None:
        if self.policy not in ALL_POLICIES:
            raise InvalidArgumentError(f"unknown policy {self.policy!r}")
        if self.horizon < 1 or self.replications < 1:
            raise InvalidArgumentError("horizon and replications must be >= 1")
        if self.policy == "hdetc" and (self.gap is None or self.gap <= 0):
            raise InvalidArgumentError("hdetc requires --gap > 0")
        if self.trace_path is not None and self.replications != 1:
            raise InvalidArgumentError("tracing is only supported for a single replication")
        if self.policy in DECENTRAL_POLICIES and not self.hints_enabled:
            raise InvalidArgumentError("the no-hint ablation applies to centralized policies")


@dataclass
class ReplicationResult:
    checkpoints: np.ndarray
    total: np.ndarray
    rank: np.ndarray
    exp: np.ndarray
    com: np.ndarray
    hints: np.ndarray
    comm_rounds: np.ndarray
    stop_time: float = math.nan
    stop_epoch: float = math.nan
    committed: tuple[int, ...] | None = None
    final_pull: tuple[int, ...] | None = None
    rank_duration: int | None = None
    ranks: tuple[int, ...] | None = None
    epochs: int | None = None
    comm_phase_lengths: list[int] | None = None
    saturated_messages: int = 0
    messages_total: int = 0


def integrate_segments(segments: list[Segment], checkpoints: np.ndarray) -> dict[str, np.ndarray]:
    """Exact cumulative metrics at each checkpoint from phase-labeled spans."""
    ncp = len(checkpoints)
    out = {k: np.zeros(ncp) for k in ("total", "rank", "exp", "com", "hints", "comm_rounds")}
    running = {k: 0.0 for k in out}
    t = 0
    i = 0
    for seg in segments:
        arr = seg.increments if isinstance(seg.increments, np.ndarray) else None
        csum = np.cumsum(arr) if arr is not None else None
        while i < ncp and checkpoints[i] <= t + seg.length:
            partial = int(checkpoints[i] - t)
            extra = float(csum[partial - 1]) if arr is not None else seg.increments * partial
            for k in out:
                out[k][i] = running[k]
            out["total"][i] += extra
            out[_PHASE_BUCKET[seg.phase]][i] += extra
            out["hints"][i] += seg.hints_per_round * partial
            if seg.phase == "comm":
                out["comm_rounds"][i] += partial
            i += 1
        seg_total = float(csum[-1]) if arr is not None else seg.increments * seg.length
        running["total"] += seg_total
        running[_PHASE_BUCKET[seg.phase]] += seg_total
        running["hints"] += seg.hints_per_round * seg.length
        if seg.phase == "comm":
            running["comm_rounds"] += seg.length
        t += seg.length
    while i < ncp:
        for k in out:
            out[k][i] = running[k]
        i += 1
    return out


@dataclass(frozen=True)
class RoundLog:
    """One phase-labeled realized round, for audit-style accounting."""

    phase: str
    profile: tuple[int, ...]
    hints: int = 0


def regret_accumulate(
    log: list[RoundLog],
    summary: InstanceSummary,
    matrix: RewardMatrix,
    checkpoints: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Fold an explicit round stream into the cumulative decomposition.

    Mirrors the engines' internal accounting and exists so tests can audit
    them round by round.
    """
    segments = []
    for entry in log:
        if entry.phase not in _PHASE_BUCKET:
            raise InvalidArgumentError(f"unlabeled round phase {entry.phase!r}")
        inc = summary.optimal_utility - utility(entry.profile, matrix)
        segments.append(Segment(entry.phase, 1, inc, hints_per_round=entry.hints))
    if checkpoints is None:
        checkpoints = np.array([len(log)], dtype=np.int64)
    return integrate_segments(segments, checkpoints)


def diagnostics(summary: InstanceSummary, delta: float) -> dict[str, float]:
    """Instance constants: the minimum gap and its kl-scale counterpart.

    The kl gap is evaluated on agent-count-normalized utilities so both
    arguments stay inside the Bernoulli range.
    """
    num_agents = len(summary.optimal_matching)
    if not 0 < delta < summary.min_gap / 2:
        raise InvalidArgumentError("need 0 < delta < min_gap / 2")
    low = (summary.optimal_utility - summary.min_gap + delta) / num_agents
    high = (summary.optimal_utility - delta) / num_agents
    return {"min_gap": summary.min_gap, "kl_gap": kl_bernoulli(low, high)}


def _run_central_replication(config: ExperimentConfig, seed: int,
                             checkpoints: np.ndarray) -> ReplicationResult:
    instance = config.instance
    summary = summarize(instance)
    ustar = summary.optimal_utility
    means = instance.means
    num_agents = instance.num_agents
    rows = np.arange(num_agents)
    policy = CENTRAL_POLICIES[config.policy](instance, hints_enabled=config.hints_enabled)
    rng = np.random.default_rng(seed)

    ncp = len(checkpoints)
    total = np.zeros(ncp)
    hints_arr = np.zeros(ncp)
    cum_regret = 0.0
    cum_hints = 0
    cp_idx = 0
    decision = None
    for t in range(1, config.horizon + 1):
        decision = policy.step(t, rng)
        pull0 = decision.pull.zero_based()
        hint0 = None if decision.hint is None else decision.hint.zero_based()
        rewards, shared, hint_draws = draw_round(means, pull0, hint0, rng)
        policy.update_arrays(decision, pull0, rewards, shared, hint0, hint_draws)
        cum_regret += ustar - float((means[rows, pull0] * ~shared).sum())
        if decision.hint is not None:
            cum_hints += num_agents
        if t == checkpoints[cp_idx]:
            total[cp_idx] = cum_regret
            hints_arr[cp_idx] = cum_hints
            cp_idx += 1
    zeros = np.zeros(ncp)
    return ReplicationResult(
        checkpoints=checkpoints,
        total=total,
        rank=zeros,
        exp=total.copy(),
        com=zeros.copy(),
        hints=hints_arr,
        comm_rounds=np.zeros(ncp),
        final_pull=decision.pull.arm_of if decision is not None else None,
    )


def _run_decentral_replication(config: ExperimentConfig, seed: int,
                               checkpoints: np.ndarray) -> ReplicationResult:
    engine = DecentralEngine(
        instance=config.instance,
        policy=config.policy,
        horizon=config.horizon,
        seed=seed,
        gap=config.gap,
        trace_path=config.trace_path,
    )
    result = engine.run()
    parts = integrate_segments(result.segments, checkpoints)
    return ReplicationResult(
        checkpoints=checkpoints,
        total=parts["total"],
        rank=parts["rank"],
        exp=parts["exp"],
        com=parts["com"],
        hints=parts["hints"],
        comm_rounds=parts["comm_rounds"],
        stop_time=result.commit_time,
        stop_epoch=result.stop_epoch,
        committed=None if result.committed is None else result.committed.arm_of,
        rank_duration=result.rank_duration,
        ranks=result.ranks,
        epochs=result.epochs,
        comm_phase_lengths=result.comm_phase_lengths,
        saturated_messages=result.saturated_messages,
        messages_total=result.messages_total,
    )


def _config_checkpoints(config: ExperimentConfig) -> np.ndarray:
    grid = set(checkpoint_grid(config.horizon).tolist())
    for t in config.extra_checkpoints:
        if not 1 <= t <= config.horizon:
            raise InvalidArgumentError("extra checkpoints must lie in [1, horizon]")
        grid.add(int(t))
    return np.array(sorted(grid), dtype=np.int64)


def run_replication(config: ExperimentConfig, rep_index: int) -> ReplicationResult:
    """One fully isolated replication with seed base_seed + rep_index."""
    checkpoints = _config_checkpoints(config)
    seed = config.base_seed + rep_index
    if config.policy in DECENTRAL_POLICIES:
        return _run_decentral_replication(config, seed, checkpoints)
    return _run_central_replication(config, seed, checkpoints)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: InstanceSummary
    checkpoints: np.ndarray
    replications: list[ReplicationResult]
    rows: list[dict] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def _stderr(values: np.ndarray) -> float:
    if values.shape[0] < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.shape[0]))


def _aggregate(config: ExperimentConfig, summary: InstanceSummary,
               checkpoints: np.ndarray, reps: list[ReplicationResult]) -> list[dict]:
    n = len(reps)
    stop_times = np.array([r.stop_time for r in reps])
    stopped = stop_times[~np.isnan(stop_times)]
    stop_mean = float(np.mean(stopped)) if stopped.size else math.nan
    rows = []
    for i, t in enumerate(checkpoints):
        totals = np.array([r.total[i] for r in reps])
        hints = np.array([r.hints[i] for r in reps])
        rows.append({
            "policy": config.policy,
            "M": config.instance.num_agents,
            "K": config.instance.num_arms,
            "gap": repr(round(summary.min_gap, 12)),
            "T": config.horizon,
            "t": int(t),
            "reps": n,
            "regret_mean": repr(float(np.mean(totals))),
            "regret_stderr": repr(_stderr(totals)),
            "regret_rank": repr(float(np.mean([r.rank[i] for r in reps]))),
            "regret_exp": repr(float(np.mean([r.exp[i] for r in reps]))),
            "regret_com": repr(float(np.mean([r.com[i] for r in reps]))),
            "hints_mean": repr(float(np.mean(hints))),
            "hints_stderr": repr(_stderr(hints)),
            "comm_rounds_mean": repr(float(np.mean([r.comm_rounds[i] for r in reps]))),
            "stop_time_mean": repr(stop_mean),
        })
    return rows


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run all replications (optionally on a worker pool) and aggregate.

    Aggregation is a deterministic fold in replication-index order, so the
    output is identical whether replications run serially or in parallel.
    """
    config.validate()
    summary = summarize(config.instance)
    checkpoints = _config_checkpoints(config)
    workers = config.workers
    if workers is None:
        workers = min(config.replications, os.cpu_count() or 1)
    if workers > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(run_replication, [config] * config.replications,
                                 range(config.replications), chunksize=1))
    else:
        reps = [run_replication(config, i) for i in range(config.replications)]
    rows = _aggregate(config, summary, checkpoints, reps)
    return ExperimentResult(
        config=config,
        summary=summary,
        checkpoints=checkpoints,
        replications=reps,
        rows=rows,
    )
