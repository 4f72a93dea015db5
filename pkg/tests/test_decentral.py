import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hintmatch import (
    EliminationParams,
    InvalidArgumentError,
    Matching,
    bit_width,
    comm_phase_length,
    decode_diff,
    encode_diff,
    hdetc_stop_threshold,
    quantization_level,
    quantize,
    run_rank_assignment,
    summarize,
)
from hintmatch.decentral import (
    AgentState,
    DecentralEngine,
    bits_to_payload,
    payload_bits,
)
from hintmatch.harness import ExperimentConfig, RoundLog, regret_accumulate, run_replication
from hintmatch.instances import RewardMatrix


def agent_rngs(num_agents, seed):
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(num_agents)]


class TestQuantize:
    def test_half_grid(self):
        assert quantize(0.37, 4) == 0.5

    def test_already_on_grid(self):
        assert quantize(0.5, 16) == 0.5

    def test_eighth_grid(self):
        assert quantize(0.37, 64) == 0.375

    def test_epoch_one_is_binary(self):
        assert quantize(0.0, 1) == 0.0
        assert quantize(0.3, 1) == 1.0

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(1, 10**6))
    def test_bounds(self, mu, rho):
        tilde = quantize(mu, rho)
        assert mu <= tilde <= min(1.0, mu + 1.0 / math.sqrt(rho)) + 1e-12

    def test_level_examples(self):
        assert quantization_level(1) == 0
        assert quantization_level(4) == 1
        assert quantization_level(64) == 3


class TestDifferentialEncoding:
    def test_identity_round(self):
        payload, saturated = encode_diff(0.5, 0.5, 16)
        assert payload == 0 and not saturated
        assert decode_diff(0.5, payload, 16) == 0.5

    def test_refinement_step(self):
        payload, saturated = encode_diff(0.375, 0.5, 64)
        assert payload == -1 and not saturated
        assert decode_diff(0.5, payload, 64) == 0.375

    def test_round_trip_fuzz(self, rng):
        for _ in range(2000):
            rho = int(rng.integers(1, 2000))
            scale = 1 << quantization_level(rho)
            prev = int(rng.integers(0, scale + 1)) / scale
            new = int(rng.integers(0, scale + 1)) / scale
            payload, saturated = encode_diff(new, prev, rho)
            assert not saturated
            assert decode_diff(prev, payload, rho) == new

    def test_bit_width_examples(self):
        assert bit_width(4) == 3
        assert bit_width(64) == 5

    def test_bits_round_trip(self, rng):
        for _ in range(500):
            width = int(rng.integers(2, 12))
            payload = int(rng.integers(-(2 ** (width - 1) - 1), 2 ** (width - 1)))
            bits = payload_bits(payload, width)
            assert len(bits) == width
            assert bits_to_payload(bits) == payload

    def test_payload_too_wide(self):
        with pytest.raises(InvalidArgumentError):
            payload_bits(4, 3)


class TestPhaseLength:
    def test_example(self):
        # two agents, two arms, entering epoch 4: 3 bits per payload
        assert comm_phase_length(2, 2, 4) == 12

    def test_single_agent_no_receivers(self):
        assert comm_phase_length(1, 5, 3) == 0

    def test_formula(self):
        for m, k, rho in [(2, 3, 1), (3, 5, 7), (4, 4, 100)]:
            assert comm_phase_length(m, k, rho) == m * (m - 1) * k * bit_width(rho)


class TestParams:
    def test_stop_threshold_example(self):
        assert hdetc_stop_threshold(2, 2, 10**5, 0.5) == 3715

    def test_elimination_schedule(self):
        params = EliminationParams(num_agents=2, horizon=10**4)
        assert params.eta == pytest.approx(1e-4)
        assert params.epsilon(1) == pytest.approx(3.1469807041887194, abs=1e-9)
        values = [params.epsilon(rho) for rho in range(1, 50)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestRankAssignment:
    def test_single_agent(self):
        ra = run_rank_assignment(1, 4, agent_rngs(1, 0))
        assert ra.ranks == (1,)
        assert ra.learned_num_agents == (1,)
        assert ra.duration == (4 + 1) + 16  # one block, then the hop schedule

    @pytest.mark.parametrize("num_agents,num_arms", [(2, 3), (3, 4)])
    def test_ranks_distinct_and_count_learned(self, num_agents, num_arms):
        durations = []
        for trial in range(250):
            ra = run_rank_assignment(num_agents, num_arms, agent_rngs(num_agents, trial))
            assert sorted(ra.ranks) == list(range(1, num_agents + 1))
            assert all(n == num_agents for n in ra.learned_num_agents)
            durations.append(ra.duration)
        bound = 2 * (num_arms**2 * num_agents / (num_arms - num_agents)
                     + 2 * num_arms + num_agents * num_arms)
        assert np.mean(durations) <= bound

    def test_profiles_shape(self):
        ra = run_rank_assignment(2, 3, agent_rngs(2, 9))
        assert ra.profiles.shape == (ra.duration, 2)
        assert ra.profiles.min() >= 0 and ra.profiles.max() < 3


class TestEliminationRule:
    def test_epoch_one_removes_nothing(self, gap03_instance):
        # 4*M*eps(1) is far above any utility gap, so every edge survives
        params = EliminationParams(num_agents=2, horizon=10**4)
        assert 4 * 2 * params.epsilon(1) > 2.0

    def test_exact_means_removal_matches_enumeration(self):
        # dyadic means so the shared matrix can hold them exactly
        means = np.array([[12, 2, 6], [4, 14, 8]]) / 16.0
        inst = RewardMatrix(means=means)
        summary = summarize(inst)
        horizon = 10**5
        params = EliminationParams(num_agents=2, horizon=horizon)

        # per-edge gap: optimum minus the best matching forced through the edge
        from hintmatch.matching import hungarian_excluding
        gaps = np.zeros((2, 3))
        for m in range(2):
            for k in range(3):
                forced = means[m, k] + sum(
                    means[a - 1, b - 1] for a, b in hungarian_excluding(means, m + 1, k + 1)
                )
                gaps[m, k] = summary.optimal_utility - forced

        engine = DecentralEngine(inst, "ebhdetc", horizon, seed=0)
        agents = [AgentState(rank=r + 1, num_agents=2, num_arms=3) for r in range(2)]
        for state in agents:
            state.shared_q = 4
            state.shared_num = (means * 16).astype(np.int64)
        no_ban = np.zeros((2, 3), dtype=bool)
        for rho in (1, 10, 100, 1000, 20000):
            for state in agents:
                state.active = np.ones((2, 3), dtype=bool)
            engine._update_active(agents, params, rho, no_ban)
            expected = gaps <= 4 * 2 * params.epsilon(rho) + 1e-12
            assert np.array_equal(agents[0].active, expected), rho


def total_regret(result):
    return result.total[-1]


class TestEngines:
    def test_hdetc_commits_in_window(self, gap03_instance):
        summary = summarize(gap03_instance)
        horizon = 10**5
        threshold = hdetc_stop_threshold(2, 3, horizon, 0.29)
        cfg = ExperimentConfig(instance=gap03_instance, policy="hdetc",
                               horizon=horizon, replications=1, base_seed=5,
                               gap=0.29, workers=1)
        result = run_replication(cfg, 0)
        stop_local = result.stop_time - result.rank_duration
        assert threshold <= stop_local < threshold + 3 + result.comm_phase_lengths[-1]
        assert result.committed == summary.optimal_matching.arm_of

    def test_hdetc_hint_accounting_exact(self, gap03_instance):
        # committing run: hints == M * K * (exploration epochs), to the round
        cfg = ExperimentConfig(instance=gap03_instance, policy="hdetc",
                               horizon=10**5, replications=1, base_seed=5,
                               gap=0.29, workers=1)
        result = run_replication(cfg, 0)
        assert not math.isnan(result.stop_time)
        assert result.hints[-1] == 2 * 3 * result.epochs
        # every broadcast phase has its scheduled length
        for rho_new, length in enumerate(result.comm_phase_lengths, start=1):
            assert length == comm_phase_length(2, 3, rho_new)

    def test_truncated_run_hints_track_exploration_rounds(self, gap03_instance):
        # horizon inside an epoch: hints still equal M * exploration rounds
        engine = DecentralEngine(gap03_instance, "hdetc", horizon=6000, seed=5, gap=0.29)
        result = engine.run()
        explore_rounds = sum(s.length for s in result.segments if s.phase == "explore")
        assert result.hints_total == 2 * explore_rounds

    def test_round_robin_covers_every_edge_each_epoch(self, gap03_instance):
        engine = DecentralEngine(gap03_instance, "hdetc", horizon=4000, seed=3, gap=0.29)
        result = engine.run()
        # exploration per epoch hints each agent's full row exactly once, so
        # every agent accumulates at least `epochs` observations per arm
        assert result.epochs >= 2
        assert np.all(result.own_counts >= result.epochs)
        # and exactly epochs + pulls: row sums count 2 observations per
        # exploration round (one pull, one hint)
        explore_rounds = sum(s.length for s in result.segments if s.phase == "explore")
        assert result.own_counts.sum() == 2 * 2 * explore_rounds

    def test_ebhdetc_stops_and_finds_optimum(self):
        inst = RewardMatrix(means=np.array([[15, 1, 3], [2, 14, 1]]) / 16.0)
        summary = summarize(inst)
        horizon = 3 * 10**5
        hits = 0
        for seed in range(5):
            cfg = ExperimentConfig(instance=inst, policy="ebhdetc", horizon=horizon,
                                   replications=1, base_seed=seed, workers=1)
            result = run_replication(cfg, 0)
            assert not math.isnan(result.stop_epoch)
            bound = 64 * 4 * math.log(horizon * 2) / summary.min_gap**2
            assert result.stop_epoch <= bound
            hits += result.committed == summary.optimal_matching.arm_of
        assert hits == 5

    def test_decomposition_identity(self, gap03_instance):
        cfg = ExperimentConfig(instance=gap03_instance, policy="ebhdetc",
                               horizon=20000, replications=1, base_seed=2, workers=1)
        r = run_replication(cfg, 0)
        np.testing.assert_allclose(r.total, r.rank + r.exp + r.com, rtol=1e-12)

    def test_cross_agent_agreement_assertions_hold(self):
        # a batch of mixed shapes; any divergence raises ProtocolFailureError
        for seed, (m, k) in enumerate([(2, 3), (2, 4), (3, 4), (3, 5), (2, 5)]):
            inst = RewardMatrix(means=np.random.default_rng(seed).random((m, k)))
            try:
                summarize(inst)
            except Exception:
                continue
            for policy, kw in (("hdetc", {"gap": 0.2}), ("ebhdetc", {})):
                cfg = ExperimentConfig(instance=inst, policy=policy, horizon=1500,
                                       replications=1, base_seed=seed, workers=1, **kw)
                run_replication(cfg, 0)

    def test_no_saturation_in_practice(self, gap03_instance):
        cfg = ExperimentConfig(instance=gap03_instance, policy="ebhdetc",
                               horizon=30000, replications=1, base_seed=8, workers=1)
        r = run_replication(cfg, 0)
        assert r.messages_total > 0
        assert r.saturated_messages == 0


class TestTraceAudit:
    def test_trace_matches_accounting(self, tmp_path, gap03_instance):
        trace_path = tmp_path / "trace.jsonl"
        cfg = ExperimentConfig(instance=gap03_instance, policy="hdetc",
                               horizon=2500, replications=1, base_seed=4,
                               gap=0.29, workers=1, trace_path=str(trace_path))
        result = run_replication(cfg, 0)

        by_round = {}
        for line in trace_path.read_text().splitlines():
            row = json.loads(line)
            by_round.setdefault(row["t"], {})[row["agent"]] = (row["phase"], row["arm"])
        assert len(by_round) == 2500

        summary = summarize(gap03_instance)
        log = []
        for t in range(1, 2501):
            phases = {phase for phase, _ in by_round[t].values()}
            assert len(phases) == 1
            phase = phases.pop()
            profile = tuple(by_round[t][agent][1] for agent in sorted(by_round[t]))
            log.append(RoundLog(phase=phase, profile=profile,
                                hints=2 if phase == "explore" else 0))
        audited = regret_accumulate(log, summary, gap03_instance,
                                    checkpoints=result.checkpoints)
        np.testing.assert_allclose(audited["total"], result.total, atol=1e-9)
        np.testing.assert_allclose(audited["rank"], result.rank, atol=1e-9)
        np.testing.assert_allclose(audited["exp"], result.exp, atol=1e-9)
        np.testing.assert_allclose(audited["com"], result.com, atol=1e-9)
        np.testing.assert_allclose(audited["hints"], result.hints, atol=0)

    def test_comm_regret_bounded_by_phase_totals(self, gap03_instance):
        cfg = ExperimentConfig(instance=gap03_instance, policy="hdetc",
                               horizon=20000, replications=1, base_seed=4,
                               gap=0.29, workers=1)
        r = run_replication(cfg, 0)
        # per communication round at most M utility is lost
        assert r.com[-1] <= 2 * r.comm_rounds[-1] + 1e-9


class TestHintShiftRule:
    def test_round_seven_uses_fourth_rotation(self):
        # global round 7 with four arms: shift (7 % 4) selects the rotation
        # pairing agent m with arm ((m + 7 % 4 - 1) mod 4) + 1, i.e. the
        # fourth covering matching
        from hintmatch.matching import covering_arm0, covering_matchings
        cov = covering_matchings(3, 4)
        shift = 7 % 4
        arms = tuple(covering_arm0(m0, shift, 4) + 1 for m0 in range(3))
        assert Matching(arms) == cov[4]
