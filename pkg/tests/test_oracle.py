from fractions import Fraction

import numpy as np
import pytest

import hybench as hb
from hybench import oracle


class TestBanditAnalysis:
    def test_true_values_exact(self):
        values = oracle.bandit_true_values(hb.BanditSpec())
        assert values == (Fraction(5, 18), Fraction(5, 12))

    def test_confounded_estimates_exact(self):
        est = oracle.bandit_confounded_estimates(
            hb.BanditSpec(), oracle.confounding_behavior_policy()
        )
        assert est == (Fraction(1, 3), Fraction(1, 4))

    def test_headline_reversal(self):
        analysis = oracle.analyze_bandit(
            hb.BanditSpec(), oracle.confounding_behavior_policy()
        )
        assert analysis.true_argmax == 1
        assert analysis.confounded_argmax == 0
        assert analysis.bias_gap == (Fraction(1, 18), Fraction(1, 6))

    def test_uniform_table_symmetric(self):
        spec = hb.BanditSpec(reward_table=((Fraction(1, 5),) * 2, (Fraction(1, 5),) * 2))
        assert oracle.bandit_true_values(spec) == (Fraction(1, 5), Fraction(1, 5))

    def test_z_independent_behavior_is_unbiased(self):
        spec = hb.BanditSpec()
        est = oracle.bandit_confounded_estimates(spec, oracle.uniform_behavior_policy())
        assert est == oracle.bandit_true_values(spec)

    def test_zero_support_action_rejected(self):
        with pytest.raises(ValueError):
            oracle.bandit_confounded_estimates(hb.BanditSpec(), ((0, 1), (0, 1)))

    def test_bias_gap_permutation_symmetric(self):
        spec = hb.BanditSpec()
        swapped = hb.BanditSpec(
            reward_table=tuple(tuple(reversed(row)) for row in spec.reward_table)
        )
        pi = oracle.confounding_behavior_policy()
        pi_swapped = tuple(tuple(reversed(row)) for row in pi)
        a = oracle.analyze_bandit(spec, pi)
        b = oracle.analyze_bandit(swapped, pi_swapped)
        assert a.bias_gap == tuple(reversed(b.bias_gap))


class TestBanditEmpirical:
    def test_confounded_sampling(self):
        emp = oracle.bandit_empirical_check(
            hb.BanditSpec(), oracle.confounding_behavior_policy(), 1_000_000, seed=0
        )
        assert abs(emp.means[0] - 1 / 3) < 0.01
        assert abs(emp.means[1] - 1 / 4) < 0.01
        assert emp.argmax == 0

    def test_uniform_sampling(self):
        emp = oracle.bandit_empirical_check(
            hb.BanditSpec(), oracle.uniform_behavior_policy(), 1_000_000, seed=0
        )
        assert abs(emp.means[0] - 5 / 18) < 0.01
        assert abs(emp.means[1] - 5 / 12) < 0.01
        assert emp.argmax == 1

    def test_deterministic(self):
        a = oracle.bandit_empirical_check(
            hb.BanditSpec(), oracle.confounding_behavior_policy(), 10_000, seed=42
        )
        b = oracle.bandit_empirical_check(
            hb.BanditSpec(), oracle.confounding_behavior_policy(), 10_000, seed=42
        )
        assert a == b


def _single_state_mdp(reward=1.0):
    T = np.ones((1, 1, 1))
    R = np.full((1, 1), reward)
    return oracle.TabularMDP(
        T, R, np.array([1.0]), np.array([False]), np.zeros((1, 1)), ("s",)
    )


class TestValueIteration:
    def test_geometric_series(self):
        V, _ = oracle.value_iteration(_single_state_mdp(), 0.95, 1e-10)
        assert V[0] == pytest.approx(20.0, abs=1e-6)

    def test_cross_checked_by_policy_eval(self):
        mdp = oracle.windygrid_mdp(hb.WindyGridParams())
        tol = 1e-9
        V, pi = oracle.value_iteration(mdp, 0.95, tol)
        V_pi = oracle.exact_policy_eval(mdp, pi, 0.95, tol)
        assert np.abs(V - V_pi).max() <= 2 * tol * 1 / (1 - 0.95)

    def test_windless_grid_matches_hand_computation(self):
        params = hb.WindyGridParams(wind_prob=0.0)
        mdp = oracle.windygrid_mdp(params)
        V, _ = oracle.value_iteration(mdp, params.discount, 1e-12)
        # shortest path start (0,4) -> goal (4,1): 7 moves, six -1 steps then +10
        g = params.discount
        steps = abs(params.goal[0] - params.start[0]) + abs(params.goal[1] - params.start[1])
        expected = -sum(g**k for k in range(steps - 1)) + g ** (steps - 1) * 10.0
        assert oracle.start_state_value(mdp, V) == pytest.approx(expected, abs=1e-9)

    def test_initialization_independent(self):
        mdp = oracle.windygrid_mdp(hb.WindyGridParams())
        tol = 1e-10
        V1, _ = oracle.value_iteration(mdp, 0.95, tol)
        # re-run from a very different starting guess via policy eval warm path
        V0 = np.full(mdp.n_states, -100.0)
        V = V0
        for _ in range(2000):
            Q = mdp.rewards + 0.95 * mdp.transitions @ V
            Q[mdp.terminal] = 0.0
            V_new = Q.max(axis=1)
            if np.abs(V_new - V).max() < tol:
                V = V_new
                break
            V = V_new
        assert np.abs(V - V1).max() <= 2 * tol / (1 - 0.95)


class TestPolicyEval:
    def test_uniform_policy_below_optimum(self):
        mdp = oracle.windygrid_mdp(hb.WindyGridParams())
        V_star, _ = oracle.value_iteration(mdp, 0.95, 1e-10)
        uniform = np.full((mdp.n_states, mdp.n_actions), 0.25)
        V_u = oracle.exact_policy_eval(mdp, uniform, 0.95, 1e-10)
        assert np.all(V_u <= V_star + 1e-8)

    def test_matches_monte_carlo(self):
        params = hb.WindyGridParams()
        mdp = oracle.windygrid_mdp(params)
        _, pi = oracle.value_iteration(mdp, params.discount, 1e-10)
        V = oracle.exact_policy_eval(mdp, pi, params.discount, 1e-12)
        exact = oracle.start_state_value(mdp, V)

        # vectorized Monte Carlo on the same kernel
        rng = np.random.default_rng(0)
        episodes = 100_000
        cum = np.cumsum(mdp.transitions, axis=2)
        start_states = rng.choice(mdp.n_states, p=mdp.start, size=episodes)
        s = start_states.copy()
        total = np.zeros(episodes)
        discount = 1.0
        for _ in range(300):
            live = ~mdp.terminal[s]
            if not live.any():
                break
            a = pi[s]
            total[live] += discount * mdp.rewards[s[live], a[live]]
            u = rng.random(episodes)
            rows = cum[s, a]
            s = (rows < u[:, None]).sum(axis=1)
            discount *= params.discount
        mc = total.mean()
        sem = total.std(ddof=1) / np.sqrt(episodes)
        assert abs(mc - exact) <= 3 * sem

    def test_finite_horizon_value(self):
        # one state, reward 1 per step, horizon 7 -> value 7 exactly
        mdp = _single_state_mdp()
        assert oracle.finite_horizon_policy_value(mdp, np.array([0]), 7) == 7.0
