import numpy as np
import pytest

from placement_opt import placement_env
from placement_opt.placement_env import (
    BYTES_PER_GB,
    EnvError,
    RewardConfig,
    evaluate_placement,
    featurize,
    penalized_runtime,
    reset,
    step,
)
from placement_opt.sim_engine import Placement, SimulationResult

from conftest import make_graph, random_dag


def fake_result(makespan, peak_bytes):
    return SimulationResult(
        makespan_seconds=makespan,
        peak_memory_bytes=tuple(peak_bytes),
        node_spans=(),
        transfers=(),
        event_count=0,
    )


class TestPenalizedRuntime:
    def test_paper_constants(self, two_device):
        # r = 2.0 s, peak 11.7 GB against a 10.7 GB threshold at 2 s/GB
        cfg = RewardConfig(mode="terminal")
        res = fake_result(2.0, [11.7 * BYTES_PER_GB, 0.0])
        assert penalized_runtime(res, two_device, cfg) == 4.0

    def test_below_threshold_identity(self, two_device):
        cfg = RewardConfig(mode="terminal")
        res = fake_result(3.5, [1e9, 2e9])
        assert penalized_runtime(res, two_device, cfg) == 3.5

    def test_boundary_inclusive(self, two_device):
        cfg = RewardConfig(mode="terminal")
        res = fake_result(1.0, [cfg.memory_threshold_bytes])
        assert penalized_runtime(res, two_device, cfg) == 1.0

    def test_monotone_and_continuous_in_memory(self, two_device):
        cfg = RewardConfig(mode="terminal")
        m_grid = np.linspace(9.0, 13.0, 81) * BYTES_PER_GB
        vals = [penalized_runtime(fake_result(2.0, [m]), two_device, cfg) for m in m_grid]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        at = penalized_runtime(fake_result(2.0, [cfg.memory_threshold_bytes]), two_device, cfg)
        just_above = penalized_runtime(
            fake_result(2.0, [cfg.memory_threshold_bytes + 1.0]), two_device, cfg
        )
        assert abs(just_above - at) < 1e-8

    def test_config_validation(self):
        with pytest.raises(EnvError):
            RewardConfig(mode="nope")
        with pytest.raises(EnvError):
            RewardConfig(penalty_per_gb=-1)
        with pytest.raises(EnvError):
            RewardConfig(reward_scale=0.0)


class TestReset:
    def test_all_device_0(self, two_device):
        g = make_graph("c3", [1, 1, 1], [0, 0, 0], {(0, 1), (1, 2)})
        st = reset(g, two_device, RewardConfig(mode="terminal", reward_scale=1.0))
        assert st.placement == (0, 0, 0)
        assert st.step_index == 0
        assert st.current_node == 0
        assert not any(st.visited)

    def test_random_init_reproducible(self, diamond, two_device):
        cfg = RewardConfig(mode="terminal", reward_scale=1.0)
        a = reset(diamond, two_device, cfg, init_mode="random", init_seed=7)
        b = reset(diamond, two_device, cfg, init_mode="random", init_seed=7)
        assert a.placement == b.placement
        c = reset(diamond, two_device, cfg, init_mode="random", init_seed=8)
        assert a.placement != c.placement  # seeds 7 and 8 happen to differ

    def test_order_seed_orthogonal_to_init(self, diamond, two_device):
        cfg = RewardConfig(mode="terminal", reward_scale=1.0)
        a = reset(diamond, two_device, cfg, order_seed=1)
        b = reset(diamond, two_device, cfg, order_seed=2)
        assert a.placement == b.placement == (0, 0, 0, 0)
        for st in (a, b):
            pos = {v: i for i, v in enumerate(st.visit_order)}
            for u, v in diamond.edges:
                assert pos[u] < pos[v]

    def test_auto_reward_scale_is_initial_runtime(self, diamond, two_device):
        cfg = RewardConfig(mode="intermediate")
        st = reset(diamond, two_device, cfg)
        r0, _ = evaluate_placement(diamond, two_device, Placement((0, 0, 0, 0)), cfg)
        assert st.reward_scale == r0
        assert st.cached_runtime == r0


class TestFeaturize:
    def test_stated_example(self, two_device):
        # node 1: on device 1, visited, not current; compute 2 of max 4,
        # output 1 MB of max 2 MB -> [0.5, 0.5, 0, 1, 1, 0]
        g = make_graph("f", [4.0, 2.0], [2e6, 1e6], {(0, 1)})
        st = reset(g, two_device, RewardConfig(mode="terminal", reward_scale=1.0))
        st, _, _ = step(st, 0, two_device, RewardConfig(mode="terminal", reward_scale=1.0))
        # after one step: node 0 visited, node 1 current; re-pin node 1 to dev 1
        object.__setattr__(st, "placement", (0, 1))
        feats = featurize(st, two_device)
        assert feats[0].tolist() == [1.0, 1.0, 1.0, 0.0, 1.0, 0.0]
        assert feats[1].tolist() == [0.5, 0.5, 0.0, 1.0, 0.0, 1.0]

    def test_current_flag_at_reset(self, diamond, two_device):
        st = reset(diamond, two_device, RewardConfig(mode="terminal", reward_scale=1.0))
        feats = featurize(st, two_device)
        assert feats[:, -1].sum() == 1.0
        assert feats[0, -1] == 1.0
        assert feats[:, -2].sum() == 0.0  # nothing visited

    def test_zero_outputs_guarded(self, two_device):
        g = make_graph("z", [1.0, 1.0], [0.0, 0.0], {(0, 1)})
        st = reset(g, two_device, RewardConfig(mode="terminal", reward_scale=1.0))
        feats = featurize(st, two_device)
        assert (feats[:, 1] == 0.0).all()

    def test_feature_dim(self, two_device):
        assert placement_env.feature_dim(2) == 6
        assert placement_env.feature_dim(4) == 8


class TestStep:
    def test_terminal_final_reward(self, two_device):
        # Build an instance whose final placement yields R = 4.0: makespan 2.0
        # with an 11.7 GB tensor against the 10.7 GB threshold.
        g = make_graph("mem", [1.0, 1.0], [11.7 * BYTES_PER_GB, 0.0], {(0, 1)})
        cfg = RewardConfig(mode="terminal", reward_scale=1.0)
        st = reset(g, two_device, cfg)
        st, r, done = step(st, 0, two_device, cfg)
        assert (r, done) == (0.0, False)
        st, r, done = step(st, 0, two_device, cfg)
        assert done
        assert r == -4.0

    def test_intermediate_unchanged_action_zero_reward(self, diamond, two_device):
        cfg = RewardConfig(mode="intermediate")
        st = reset(diamond, two_device, cfg)
        st2, r, _ = step(st, 0, two_device, cfg)  # keeps node 0 on device 0
        assert r == 0.0

    def test_episode_length_and_flags(self, diamond, two_device):
        cfg = RewardConfig(mode="terminal", reward_scale=1.0)
        st = reset(diamond, two_device, cfg)
        seen = []
        for i in range(diamond.num_nodes):
            seen.append(st.current_node)
            st, _, done = step(st, 1, two_device, cfg)
            assert done == (i == diamond.num_nodes - 1)
        assert sorted(seen) == [0, 1, 2, 3]
        assert all(st.visited)
        assert st.placement == (1, 1, 1, 1)
        with pytest.raises(EnvError, match="after episode end"):
            step(st, 0, two_device, cfg)

    def test_invalid_action(self, diamond, two_device):
        cfg = RewardConfig(mode="terminal", reward_scale=1.0)
        st = reset(diamond, two_device, cfg)
        with pytest.raises(EnvError, match="invalid device"):
            step(st, 9, two_device, cfg)

    def test_intermediate_telescopes(self, two_device):
        rng = np.random.default_rng(17)
        cfg = RewardConfig(mode="intermediate")
        for _ in range(15):
            g = random_dag(rng, max_nodes=7, bytes_range=(0.0, 4e6))
            st = reset(g, two_device, cfg)
            r0 = st.cached_runtime
            total = 0.0
            while not st.done:
                st, r, _ = step(st, int(rng.integers(2)), two_device, cfg)
                total += r
            r_final, _ = evaluate_placement(g, two_device, Placement(st.placement), cfg)
            assert total == pytest.approx((r0 - r_final) / st.reward_scale, abs=1e-9)

    def test_modes_rank_final_placements_identically(self, two_device):
        rng = np.random.default_rng(23)
        for _ in range(10):
            g = random_dag(rng, max_nodes=6, bytes_range=(0.0, 4e6))

            def ret(mode, actions):
                cfg = RewardConfig(mode=mode, reward_scale=2.5)
                st = reset(g, two_device, cfg)
                total = 0.0
                for a in actions:
                    st, r, _ = step(st, a, two_device, cfg)
                    total += r
                return total

            acts1 = [int(rng.integers(2)) for _ in range(g.num_nodes)]
            acts2 = [int(rng.integers(2)) for _ in range(g.num_nodes)]
            t_order = ret("terminal", acts1) - ret("terminal", acts2)
            i_order = ret("intermediate", acts1) - ret("intermediate", acts2)
            assert t_order == pytest.approx(i_order, abs=1e-9)
