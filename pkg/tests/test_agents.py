import dataclasses

import numpy as np
import pytest

import hybench as hb
from hybench import agents, data, oracle
from hybench.agents import (
    AgentConfig,
    FunctionPolicy,
    QPolicy,
    UniformPolicy,
    actions_to_indices,
    default_agent_config,
    evaluate_policy,
    policy_from_dict,
    policy_to_dict,
    train_hymopo,
    train_mopo_lite,
    train_offline_bcq,
    train_online_q,
)


@pytest.fixture(scope="module")
def grid_env():
    return hb.make_env("windygrid")


@pytest.fixture(scope="module")
def grid_mdp(grid_env):
    return oracle.windygrid_mdp(grid_env.params)


@pytest.fixture(scope="module")
def grid_medium_dataset(grid_env):
    return data.generate_dataset(
        grid_env, data.DatasetRecipe(tier="medium", n_records=20_000, seed=0)
    )


def exact_value(mdp, policy, gamma, obs_transform=None):
    table = oracle.policy_table_from_agent(mdp, policy, obs_transform=obs_transform)
    V = oracle.exact_policy_eval(mdp, table, gamma, 1e-12)
    return oracle.start_state_value(mdp, V)


class TestEvaluatePolicy:
    def test_deterministic_setting_zero_std(self):
        env = hb.make_env("windygrid", {"wind_prob": 0.0})
        pol = FunctionPolicy(lambda o: 3, (0, 1, 2, 3))
        mean, std = evaluate_policy(env, pol, episodes=10, seed=0)
        assert std == 0.0

    def test_single_episode_zero_std(self):
        env = hb.make_env("windygrid")
        pol = UniformPolicy((0, 1, 2, 3), seed=0)
        _, std = evaluate_policy(env, pol, episodes=1, seed=0)
        assert std == 0.0

    def test_matches_oracle_within_ci(self, grid_env, grid_mdp):
        params = grid_env.params
        _, pi_star = oracle.value_iteration(grid_mdp, params.discount, 1e-10)
        index = {lab: i for i, lab in enumerate(grid_mdp.labels)}

        def fn(obs):
            key = ((int(round(obs[0])), int(round(obs[1]))), int(round(obs[2])))
            return int(pi_star[index[key]])

        pol = FunctionPolicy(fn, (0, 1, 2, 3))
        episodes = 10_000
        mean, std = evaluate_policy(hb.make_env("windygrid"), pol, episodes, seed=3)
        exact = oracle.finite_horizon_policy_value(grid_mdp, pi_star, params.horizon)
        assert abs(mean - exact) <= 3 * std / np.sqrt(episodes)

    def test_deterministic_given_seed(self):
        env = hb.make_env("windygrid")
        pol = UniformPolicy((0, 1, 2, 3), seed=0)
        a = evaluate_policy(env, pol, 50, seed=5)
        b = evaluate_policy(hb.make_env("windygrid"), pol, 50, seed=5)
        assert a == b


class TestOnlineQ:
    def test_windygrid_reaches_value_iteration_optimum(self, grid_env, grid_mdp):
        cfg = default_agent_config(grid_env)
        res = train_online_q(hb.make_env("windygrid"), cfg, seed=0, budget=25_000)
        V, _ = oracle.value_iteration(grid_mdp, grid_env.params.discount, 1e-10)
        v_pol = exact_value(grid_mdp, res.policy, grid_env.params.discount)
        assert abs(oracle.start_state_value(grid_mdp, V) - v_pol) <= 1e-3

    def test_curve_and_checkpoints_align(self, grid_env):
        cfg = dataclasses.replace(default_agent_config(grid_env), sweeps=5)
        res = train_online_q(hb.make_env("windygrid"), cfg, seed=1, budget=3_000)
        assert len(res.curve) == len(res.checkpoints) == 5
        assert res.checkpoints[-1]["replay_len"] == len(res.replay)

    def test_myopic_gamma_zero_fits_immediate_reward(self, grid_env):
        cfg = dataclasses.replace(default_agent_config(grid_env), gamma=0.0,
                                  sweeps=8, episodes_per_sweep=15, q_iterations=4)
        res = train_online_q(hb.make_env("windygrid"), cfg, seed=0, budget=10_000)
        O = np.stack([r.obs for r in res.replay])
        A = np.asarray([r.action for r in res.replay])
        R = np.asarray([r.reward for r in res.replay])
        q = res.policy.q
        preds = q.values(O)[np.arange(len(A)), actions_to_indices(A, res.action_grid)]
        assert np.sqrt(np.mean((preds - R) ** 2)) <= 0.1

    def test_deterministic_bit_exact(self, grid_env):
        cfg = dataclasses.replace(default_agent_config(grid_env), sweeps=4)
        a = train_online_q(hb.make_env("windygrid"), cfg, seed=2, budget=2_000)
        b = train_online_q(hb.make_env("windygrid"), cfg, seed=2, budget=2_000)
        assert np.array_equal(a.policy.q.weights, b.policy.q.weights)
        assert a.curve == b.curve


class TestOfflineBCQ:
    def test_expert_data_recovers_expert(self, grid_env, grid_mdp):
        # deterministic wind-aware expert from value iteration
        _, pi_star = oracle.value_iteration(grid_mdp, grid_env.params.discount, 1e-10)
        index = {lab: i for i, lab in enumerate(grid_mdp.labels)}

        def fn(obs):
            key = ((int(round(obs[0])), int(round(obs[1]))), int(round(obs[2])))
            return int(pi_star[index[key]])

        expert = FunctionPolicy(fn, (0, 1, 2, 3))
        ds = data.collect_dataset(hb.make_env("windygrid"), expert, 15_000,
                                  "observed", seed=0)
        cfg = dataclasses.replace(default_agent_config(grid_env), bc_threshold=0.5)
        res = train_offline_bcq(ds, cfg, seed=0)
        seen = {tuple(rec.obs) for rec in ds.records}
        match = [
            res.policy.action_index(np.array(obs)) == fn(np.array(obs))
            for obs in seen
        ]
        assert np.mean(match) >= 0.99

    def test_tau_zero_equals_unconstrained(self, grid_medium_dataset, grid_env):
        cfg0 = dataclasses.replace(default_agent_config(grid_env), bc_threshold=0.0)
        a = train_offline_bcq(grid_medium_dataset, cfg0, seed=0)
        b = train_offline_bcq(grid_medium_dataset, cfg0, seed=0)
        assert np.array_equal(a.q.weights, b.q.weights)

    def test_confounded_worse_than_blind(self, grid_env):
        # full construction lives in the acceptance suite; here a smoke check
        # that training runs on corrupted datasets
        ds = data.generate_dataset(
            grid_env, data.DatasetRecipe(tier="random", n_records=4_000, seed=1)
        )
        hidden = data.corrupt_hide_dims(ds, [2])
        res = train_offline_bcq(hidden, default_agent_config(grid_env), seed=0)
        assert res.policy.action_index(np.array([0.0, 4.0, 0.0])) in range(4)

    def test_empty_dataset_rejected(self, grid_env):
        with pytest.raises(ValueError):
            ds = data.generate_dataset(
                grid_env, data.DatasetRecipe(tier="random", n_records=10, seed=0)
            )
            ds.records = []
            train_offline_bcq(ds, default_agent_config(grid_env), seed=0)


class TestModelBased:
    def test_h0_equals_unconstrained_offline(self, grid_medium_dataset, grid_env):
        base = default_agent_config(grid_env)
        cfg_off = dataclasses.replace(
            base, bc_threshold=0.0, offline_iterations=base.epochs * base.q_iterations
        )
        off = train_offline_bcq(grid_medium_dataset, cfg_off, seed=0)
        cfg_h0 = dataclasses.replace(base, rollout_horizon=0)
        mopo = train_mopo_lite(grid_medium_dataset, cfg_h0, seed=0)
        assert np.array_equal(mopo.q.weights, off.q.weights)
        assert mopo.synthetic_count == 0

    def test_hymopo_degenerate_equals_offline(self, grid_medium_dataset, grid_env):
        base = default_agent_config(grid_env)
        cfg_off = dataclasses.replace(
            base, bc_threshold=0.0, offline_iterations=base.epochs * base.q_iterations
        )
        off = train_offline_bcq(grid_medium_dataset, cfg_off, seed=0)
        cfg_deg = dataclasses.replace(
            base, rollout_horizon=0, lam=0.0,
            model=dataclasses.replace(base.model, n_members=1),
        )
        hy = train_hymopo(grid_medium_dataset, hb.make_env("windygrid"), cfg_deg, seed=0)
        assert np.array_equal(hy.q.weights, off.q.weights)

    def test_paper_default_hyperparameters(self):
        cfg = AgentConfig()
        assert cfg.lam == 0.0
        assert cfg.rollout_horizon == 5

    def test_huge_lambda_crushes_synthetic_rewards(self, grid_medium_dataset, grid_env):
        cfg = dataclasses.replace(default_agent_config(grid_env), lam=1e6,
                                  epochs=6)
        res = train_mopo_lite(grid_medium_dataset, cfg, seed=0)
        r_min = grid_medium_dataset.arrays()[2].min()
        assert all(t.penalized_reward <= r_min for t in res.trace)
        assert all(t.penalized_reward <= t.reward for t in res.trace)

    @pytest.mark.xfail(
        reason="hypothesized limit does not hold here: heavily penalized "
        "synthetic rows act as targeted pessimism at rollout-visited pairs "
        "and change the argmax, instead of reducing training to the "
        "unconstrained offline solution",
        strict=False,
    )
    def test_huge_lambda_degenerates_to_offline_value(self, grid_medium_dataset,
                                                      grid_env, grid_mdp):
        base = default_agent_config(grid_env)
        cfg_off = dataclasses.replace(
            base, bc_threshold=0.0, offline_iterations=base.epochs * base.q_iterations
        )
        off = train_offline_bcq(grid_medium_dataset, cfg_off, seed=0)
        v_off = exact_value(grid_mdp, off.policy, grid_env.params.discount)
        cfg = dataclasses.replace(base, lam=1e6)
        res = train_mopo_lite(grid_medium_dataset, cfg, seed=0)
        v_mopo = exact_value(grid_mdp, res.policy, grid_env.params.discount)
        assert abs(v_mopo - v_off) <= 1.0

    def test_rollout_starts_come_from_dataset(self, grid_medium_dataset, grid_env):
        cfg = dataclasses.replace(default_agent_config(grid_env), epochs=4)
        res = train_mopo_lite(grid_medium_dataset, cfg, seed=0)
        obs_pool = {o.tobytes() for o in grid_medium_dataset.arrays()[0]}
        starts = [t for t in res.trace if t.step == 0]
        assert starts
        assert all(t.obs.tobytes() in obs_pool for t in starts)

    def test_trace_algebra_exact(self, grid_medium_dataset, grid_env):
        cfg = dataclasses.replace(default_agent_config(grid_env), lam=0.7, epochs=4)
        sim = hb.with_transition_error(hb.make_env("windygrid"), {"wind_prob": 0.5})
        res = train_hymopo(grid_medium_dataset, sim, cfg, seed=0)
        obs_dim = 3
        for t in res.trace[:500]:
            assert np.array_equal(t.next_obs, t.sim_next_obs + t.target_draw[:obs_dim])
            assert t.penalized_reward == t.reward - cfg.lam * t.penalty
            assert t.penalty >= 0.0
            assert t.penalized_reward <= t.reward

    def test_perfect_sim_hybrid_at_least_mopo(self):
        # three-seed mean comparison on the pendulum with an exact simulator
        env = hb.make_env("pendulum")
        pol = UniformPolicy(tuple(np.linspace(-2, 2, 9)), seed=0)
        ds = data.collect_dataset(env, pol, 8_000, "observed", seed=0)
        cfg = dataclasses.replace(default_agent_config(env), epochs=10,
                                  rollout_batch=48)
        hy_scores, mo_scores = [], []
        for seed in (0, 1, 2):
            hy = train_hymopo(ds, hb.make_env("pendulum"), cfg, seed=seed)
            mo = train_mopo_lite(ds, cfg, seed=seed)
            vh, _ = evaluate_policy(hb.make_env("pendulum"), hy.policy, 20, seed=99)
            vm, _ = evaluate_policy(hb.make_env("pendulum"), mo.policy, 20, seed=99)
            hy_scores.append(vh)
            mo_scores.append(vm)
        assert np.mean(hy_scores) >= np.mean(mo_scores) - 1e-9

    def test_perfect_sim_synthetic_matches_true_dynamics(self):
        env = hb.make_env("pendulum")
        pol = UniformPolicy(tuple(np.linspace(-2, 2, 9)), seed=0)
        ds = data.collect_dataset(env, pol, 6_000, "observed", seed=0)
        cfg = dataclasses.replace(default_agent_config(env), epochs=3,
                                  rollout_batch=32)
        hy = train_hymopo(ds, hb.make_env("pendulum"), cfg, seed=0)
        grid = np.asarray(hy.policy.action_grid)
        noise = max(
            float(np.sqrt(m.noise_var[:3].sum())) for m in hy.ensemble.members
        )
        true_env = hb.make_env("pendulum")
        errs = []
        for t in hy.trace[:1000]:
            truth, _ = true_env.simulate_step(t.obs, grid[t.action_index])
            errs.append(np.linalg.norm(t.next_obs - truth))
        assert np.median(errs) <= max(3 * noise, 1e-9)


class TestPolicySerialization:
    def test_q_policy_round_trip(self, grid_medium_dataset, grid_env):
        res = train_offline_bcq(grid_medium_dataset,
                                default_agent_config(grid_env), seed=0)
        back = policy_from_dict(policy_to_dict(res.policy))
        probe = np.array([2.0, 3.0, 1.0])
        assert back.action_index(probe) == res.policy.action_index(probe)
        assert np.array_equal(back.q.weights, res.policy.q.weights)
        assert back.bc_threshold == res.policy.bc_threshold

    def test_uniform_round_trip(self):
        pol = UniformPolicy((0, 1, 2), seed=3)
        back = policy_from_dict(policy_to_dict(pol))
        assert isinstance(back, UniformPolicy)
        assert back.action_grid == (0, 1, 2)

    def test_save_load_file(self, tmp_path, grid_medium_dataset, grid_env):
        res = train_offline_bcq(grid_medium_dataset,
                                default_agent_config(grid_env), seed=0)
        path = tmp_path / "policy.json"
        agents.save_policy(res.policy, path)
        back = agents.load_policy(path)
        assert np.array_equal(back.q.weights, res.policy.q.weights)
