import math

import numpy as np
import pytest

import hybench as hb
from hybench.envs import EnvError, pendulum_energy, wrap_angle


def rollout(env, actions, seed=0):
    obs = [env.reset(seed=seed)]
    rewards = []
    for a in actions:
        res = env.step(a)
        rewards.append(res.reward)
        obs.append(env.reset() if res.done else res.obs)
    return np.stack(obs), np.array(rewards)


class TestPendulumStep:
    def test_upright_fixed_point(self):
        (theta, omega), reward = hb.pendulum_step((0.0, 0.0), 0.0, hb.PendulumParams())
        assert abs(theta) < 1e-15
        assert abs(omega) < 1e-15
        assert abs(reward) < 1e-15

    def test_hanging_equilibrium(self):
        (theta, omega), reward = hb.pendulum_step(
            (math.pi, 0.0), 0.0, hb.PendulumParams()
        )
        assert abs(omega) < 1e-15
        assert theta == pytest.approx(math.pi, abs=1e-12)
        assert reward == pytest.approx(-math.pi**2, abs=1e-12)

    def test_matches_independent_reimplementation(self):
        # second implementation of the same update rule, written from scratch
        p = hb.PendulumParams()
        theta, omega, torque = math.pi / 2, 0.0, 1.0
        tq = max(-p.torque_limit, min(p.torque_limit, torque))
        om2 = omega + p.dt * (
            -(p.gravity / p.length) * math.sin(theta + math.pi)
            + tq / (p.mass * p.length**2)
            - p.friction * omega
        )
        th2 = theta + p.dt * om2
        th2 = math.atan2(math.sin(th2), math.cos(th2))
        (got_th, got_om), _ = hb.pendulum_step((theta, omega), torque, p)
        assert got_th == pytest.approx(th2, abs=1e-12)
        assert got_om == pytest.approx(om2, abs=1e-12)

    def test_torque_clamped(self):
        p = hb.PendulumParams()
        s_clamped, r_clamped = hb.pendulum_step((1.0, 0.0), 100.0, p)
        s_limit, r_limit = hb.pendulum_step((1.0, 0.0), p.torque_limit, p)
        assert s_clamped == s_limit
        assert r_clamped == r_limit

    def test_non_finite_state_rejected(self):
        with pytest.raises(EnvError):
            hb.pendulum_step((float("nan"), 0.0), 0.0, hb.PendulumParams())
        with pytest.raises(EnvError):
            hb.pendulum_step((0.0, float("inf")), 0.0, hb.PendulumParams())

    def test_energy_drift_bounded(self):
        # friction-free, torque-free: the secular (time-averaged) energy error
        # of the symplectic update stays within 2% over an episode; the
        # instantaneous oscillation is O(dt) and larger.
        params = hb.PendulumParams(friction=0.0)
        for theta0, omega0 in ((math.pi / 2, 0.0), (1.0, 0.5), (0.5, -1.0)):
            state = (theta0, omega0)
            e0 = pendulum_energy(state, params)
            energies = []
            for _ in range(params.horizon):
                state, _ = hb.pendulum_step(state, 0.0, params)
                energies.append(pendulum_energy(state, params))
            drift = abs(np.mean(energies) - e0) / e0
            assert drift <= 0.02, f"secular energy drift {drift:.3%} from {theta0}"


class TestPendulumEnv:
    def test_reset_deterministic(self):
        env = hb.make_env("pendulum")
        a = env.reset(seed=7)
        b = hb.make_env("pendulum").reset(seed=7)
        assert np.array_equal(a, b)

    def test_observation_dim_and_identity(self):
        env = hb.make_env("pendulum")
        obs = env.reset(seed=3)
        assert obs.shape == (3,)
        for _ in range(50):
            res = env.step(0.5)
            assert res.obs.shape == (3,)
            assert abs(res.obs[0] ** 2 + res.obs[1] ** 2 - 1.0) < 1e-9

    def test_trajectories_bit_exact(self):
        actions = np.linspace(-2, 2, 40)
        o1, r1 = rollout(hb.make_env("pendulum"), actions, seed=11)
        o2, r2 = rollout(hb.make_env("pendulum"), actions, seed=11)
        assert np.array_equal(o1, o2)
        assert np.array_equal(r1, r2)

    def test_unseeded_first_reset_rejected(self):
        with pytest.raises(EnvError):
            hb.make_env("pendulum").reset()

    def test_step_after_done_rejected(self):
        env = hb.make_env("pendulum", {"horizon": 3})
        env.reset(seed=0)
        for _ in range(3):
            res = env.step(0.0)
        assert res.done
        with pytest.raises(EnvError):
            env.step(0.0)

    def test_full_state_matches_observation(self):
        env = hb.make_env("pendulum")
        obs = env.reset(seed=5)
        theta, omega = env.full_state()
        # full state is the privileged (theta, omega) pair behind the obs
        assert env.full_state().shape == (2,)
        assert obs[0] == math.cos(theta)
        assert obs[1] == math.sin(theta)
        assert obs[2] == omega


class TestWindyGrid:
    def test_plain_move(self):
        params = hb.WindyGridParams()
        cell, reward, done = hb.windygrid_step((0, 0), 0, 3, params)  # right
        assert cell == (1, 0)
        assert reward == params.step_penalty
        assert not done

    def test_wind_push_clamped_at_bottom(self):
        params = hb.WindyGridParams()
        cell, _, _ = hb.windygrid_step((2, 0), 1, 3, params)
        assert cell == (3, 0)

    def test_goal_reached(self):
        params = hb.WindyGridParams()
        gx, gy = params.goal
        cell, reward, done = hb.windygrid_step((gx, gy + 1), 0, 1, params)  # down
        assert cell == params.goal
        assert reward == params.goal_reward
        assert done

    def test_wind_pushes_past_goal(self):
        params = hb.WindyGridParams()
        gx, gy = params.goal
        cell, reward, done = hb.windygrid_step((gx, gy + 1), 1, 1, params)
        assert cell == (gx, gy - 1)
        assert not done

    def test_out_of_bounds_rejected(self):
        with pytest.raises(EnvError):
            hb.windygrid_step((9, 0), 0, 0, hb.WindyGridParams())

    def test_transition_matrix_matches_enumeration(self):
        # independent implementation of the rule, enumerated exhaustively
        from hybench.oracle import windygrid_mdp

        params = hb.WindyGridParams()
        mdp = windygrid_mdp(params)
        moves = {0: (0, 1), 1: (0, -1), 2: (-1, 0), 3: (1, 0)}
        index = {lab: i for i, lab in enumerate(mdp.labels)}
        for (cell, wind), s in ((lab, i) for i, lab in enumerate(mdp.labels)
                                if lab != "terminal"):
            for a in range(4):
                dx, dy = moves[a]
                x2 = min(max(cell[0] + dx, 0), params.width - 1)
                y2 = min(max(cell[1] + dy, 0), params.height - 1)
                if wind:
                    y2 = max(y2 - 1, 0)
                expected = np.zeros(mdp.n_states)
                if (x2, y2) == params.goal:
                    expected[index["terminal"]] = 1.0
                    assert mdp.rewards[s, a] == params.goal_reward
                else:
                    expected[index[((x2, y2), 0)]] += 1 - params.wind_prob
                    expected[index[((x2, y2), 1)]] += params.wind_prob
                    assert mdp.rewards[s, a] == params.step_penalty
                assert np.allclose(mdp.transitions[s, a], expected)

    def test_kernel_rows_sum_to_one(self):
        from hybench.oracle import windygrid_mdp

        mdp = windygrid_mdp(hb.WindyGridParams())
        assert np.allclose(mdp.transitions.sum(axis=2), 1.0)

    def test_env_full_state_reveals_wind(self):
        env = hb.make_env("windygrid")
        obs = env.reset(seed=4)
        assert np.array_equal(obs, env.full_state())
        assert obs[2] in (0.0, 1.0)

    def test_env_trajectory_deterministic(self):
        actions = [0, 3, 3, 1, 2, 0, 3, 3, 3, 1] * 3
        o1, r1 = rollout(hb.make_env("windygrid"), actions, seed=9)
        o2, r2 = rollout(hb.make_env("windygrid"), actions, seed=9)
        assert np.array_equal(o1, o2)
        assert np.array_equal(r1, r2)


class TestBandit:
    def test_paper_table_frequencies(self):
        spec = hb.BanditSpec()
        rng = np.random.default_rng(0)
        n = 1_000_000
        draws = np.array([hb.bandit_pull(1, 1, spec, rng) for _ in range(1000)])
        # vectorized equivalent for the big sample
        u = rng.random(n)
        assert abs((u < 0.5).mean() - 0.5) < 0.002  # sanity of the check itself
        mean_11 = (np.random.default_rng(1).random(n) < float(spec.reward_table[1][1])).mean()
        assert abs(mean_11 - 0.5) < 0.002
        mean_00 = (np.random.default_rng(2).random(n) < float(spec.reward_table[0][0])).mean()
        assert abs(mean_00 - 1 / 6) < 0.002
        assert set(draws) <= {0, 1}

    def test_empirical_frequencies_within_3_sigma(self):
        spec = hb.BanditSpec()
        n = 1_000_000
        rng = np.random.default_rng(5)
        for z in (0, 1):
            for a in (0, 1):
                p = float(spec.reward_table[z][a])
                mean = (rng.random(n) < p).mean()
                sigma = math.sqrt(p * (1 - p) / n)
                assert abs(mean - p) <= 3 * sigma

    def test_zero_table_never_rewards(self):
        spec = hb.BanditSpec(reward_table=((0, 0), (0, 0)))
        rng = np.random.default_rng(3)
        assert all(hb.bandit_pull(z, a, spec, rng) == 0
                   for z in (0, 1) for a in (0, 1) for _ in range(100))

    def test_env_single_decision(self):
        env = hb.make_env("bandit")
        obs = env.reset(seed=1)
        assert obs.shape == (0,)
        assert env.full_state().shape == (1,)
        res = env.step(1)
        assert res.done
        with pytest.raises(EnvError):
            env.step(0)


class TestConstruction:
    def test_make_env_overrides(self):
        env = hb.make_env("pendulum", {"gravity": 19.62, "horizon": 10})
        assert env.params.gravity == 19.62
        assert env.params.horizon == 10

    def test_unknown_env_and_param_rejected(self):
        with pytest.raises(EnvError):
            hb.make_env("acrobot")
        with pytest.raises(EnvError):
            hb.make_env("pendulum", {"mass_of_moon": 1.0})

    def test_invalid_param_value_rejected(self):
        with pytest.raises(EnvError):
            hb.make_env("pendulum", {"gravity": -1.0})
        with pytest.raises(EnvError):
            hb.make_env("windygrid", {"start": [4, 1]})  # equals goal

    def test_wrap_angle_range(self):
        for x in np.linspace(-20, 20, 401):
            w = wrap_angle(float(x))
            assert -math.pi < w <= math.pi
        assert wrap_angle(math.pi) == math.pi
