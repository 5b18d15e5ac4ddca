"""Exact ground truth.

Analytic values for the latent-context bandit (kept in rational arithmetic
when the table probabilities are rational), plus value iteration and exact
policy evaluation for enumerable environments.  Everything here is pure and
deterministic; the rest of the package is validated against it.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .envs import BanditSpec, WindyGridParams, windygrid_step

# ---------------------------------------------------------------------------
# Bandit analysis
# ---------------------------------------------------------------------------

BehaviorPolicy = tuple[tuple, tuple]  # pi_b[z][a], rows z in {0, 1}


def confounding_behavior_policy() -> BehaviorPolicy:
    """Deterministic z-dependent rule: pick a1 when z = 0, a0 when z = 1.

    Under the default :class:`BanditSpec` this reverses the apparent ranking
    of the two actions in logged data, because each action is only ever tried
    in the context where its success rate is the lower one.
    """
    return ((0, 1), (1, 0))


def uniform_behavior_policy() -> BehaviorPolicy:
    return ((Fraction(1, 2), Fraction(1, 2)), (Fraction(1, 2), Fraction(1, 2)))


def bandit_true_values(spec: BanditSpec) -> tuple:
    """E_z[P(r = 1 | z, a)] per action, exact."""
    p0, p1 = spec.p_z0, spec.p_z1
    table = spec.reward_table
    return tuple(p0 * table[0][a] + p1 * table[1][a] for a in (0, 1))


def bandit_confounded_estimates(spec: BanditSpec, pi_b: BehaviorPolicy) -> tuple:
    """What the conditional-mean estimator converges to on data logged by pi_b.

    For each action, E_z[P(r=1 | a, z) pi_b(a | z)] / E_z[pi_b(a | z)].
    An action with zero marginal probability has no defined estimand.
    """
    p_z = (spec.p_z0, spec.p_z1)
    table = spec.reward_table
    estimates = []
    for a in (0, 1):
        num = sum(p_z[z] * table[z][a] * pi_b[z][a] for z in (0, 1))
        den = sum(p_z[z] * pi_b[z][a] for z in (0, 1))
        if den == 0:
            raise ValueError(
                f"action a{a} has zero probability under the behavior policy; "
                "its conditional value estimand is undefined"
            )
        estimates.append(num / den)
    return tuple(estimates)


def _argmax_pair(values) -> int:
    return 0 if values[0] > values[1] else 1


@dataclass(frozen=True)
class BanditAnalysis:
    """Exact summary of the bandit: interventional values, what logged data
    suggests, and the per-action gap between the two."""

    true_values: tuple
    confounded_estimates: tuple
    true_argmax: int
    confounded_argmax: int
    bias_gap: tuple

    def rows(self) -> list[dict]:
        out = []
        for a in (0, 1):
            out.append(
                {
                    "action": f"a{a}",
                    "true_value": self.true_values[a],
                    "confounded_estimate": self.confounded_estimates[a],
                    "bias_gap": self.bias_gap[a],
                }
            )
        return out


def analyze_bandit(spec: BanditSpec, pi_b: BehaviorPolicy) -> BanditAnalysis:
    true_vals = bandit_true_values(spec)
    conf = bandit_confounded_estimates(spec, pi_b)
    gap = tuple(abs(true_vals[a] - conf[a]) for a in (0, 1))
    return BanditAnalysis(
        true_values=true_vals,
        confounded_estimates=conf,
        true_argmax=_argmax_pair(true_vals),
        confounded_argmax=_argmax_pair(conf),
        bias_gap=gap,
    )


@dataclass(frozen=True)
class BanditEmpirical:
    means: tuple[float, float]
    counts: tuple[int, int]
    argmax: int


def bandit_empirical_check(
    spec: BanditSpec, pi_b: BehaviorPolicy, n: int, seed: int
) -> BanditEmpirical:
    """Simulate n logged (z, a, r) draws and report per-action sample means."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = (rng.random(n) >= float(spec.p_z0)).astype(np.int64)
    p_a1 = np.where(z == 1, float(pi_b[1][1]), float(pi_b[0][1]))
    a = (rng.random(n) < p_a1).astype(np.int64)
    table = np.array([[float(p) for p in row] for row in spec.reward_table])
    r = (rng.random(n) < table[z, a]).astype(np.int64)
    means = []
    counts = []
    for action in (0, 1):
        mask = a == action
        counts.append(int(mask.sum()))
        means.append(float(r[mask].mean()) if mask.any() else float("nan"))
    defined = [m for m in means if not np.isnan(m)]
    argmax = int(np.nanargmax(means)) if defined else -1
    return BanditEmpirical(tuple(means), tuple(counts), argmax)


# ---------------------------------------------------------------------------
# Tabular dynamic programming
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TabularMDP:
    """Enumerated MDP: transition kernel, expected rewards, start distribution,
    terminal mask and the observation vector each state emits."""

    transitions: np.ndarray  # (S, A, S)
    rewards: np.ndarray  # (S, A)
    start: np.ndarray  # (S,)
    terminal: np.ndarray  # (S,) bool
    observations: np.ndarray  # (S, obs_dim)
    labels: tuple

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def windygrid_mdp(params: WindyGridParams) -> TabularMDP:
    """Exact MDP for the windy gridworld over states (x, y, wind) plus one
    absorbing terminal state entered on reaching the goal."""
    cells = [
        (x, y)
        for x in range(params.width)
        for y in range(params.height)
        if (x, y) != params.goal
    ]
    states = [(c, w) for c in cells for w in (0, 1)]
    index = {s: i for i, s in enumerate(states)}
    terminal_idx = len(states)
    n_states = len(states) + 1
    n_actions = 4
    p = params.wind_prob

    T = np.zeros((n_states, n_actions, n_states))
    R = np.zeros((n_states, n_actions))
    for (cell, wind), s in index.items():
        for a in range(n_actions):
            cell2, reward, reached_goal = windygrid_step(cell, wind, a, params)
            R[s, a] = reward
            if reached_goal:
                T[s, a, terminal_idx] = 1.0
            else:
                T[s, a, index[(cell2, 0)]] += 1.0 - p
                T[s, a, index[(cell2, 1)]] += p
    T[terminal_idx, :, terminal_idx] = 1.0

    start = np.zeros(n_states)
    start[index[(params.start, 0)]] = 1.0 - p
    start[index[(params.start, 1)]] = p

    terminal = np.zeros(n_states, dtype=bool)
    terminal[terminal_idx] = True

    obs = np.zeros((n_states, 3))
    labels = []
    for (cell, wind), s in index.items():
        obs[s] = (float(cell[0]), float(cell[1]), float(wind))
        labels.append((cell, wind))
    labels.append("terminal")
    return TabularMDP(T, R, start, terminal, obs, tuple(labels))


def value_iteration(
    mdp: TabularMDP, gamma: float, tol: float, max_iter: int = 100_000
) -> tuple[np.ndarray, np.ndarray]:
    """Bellman optimality iteration to sup-norm change < tol.

    Returns (V*, greedy policy).  Terminal states keep value 0.
    """
    if not 0 <= gamma < 1:
        raise ValueError("value iteration requires gamma in [0, 1)")
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = mdp.rewards + gamma * mdp.transitions @ V
        Q[mdp.terminal] = 0.0
        V_new = Q.max(axis=1)
        delta = np.abs(V_new - V).max()
        V = V_new
        if delta < tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge within {max_iter} sweeps")
    Q = mdp.rewards + gamma * mdp.transitions @ V
    Q[mdp.terminal] = 0.0
    return V, Q.argmax(axis=1)


def _policy_matrices(mdp: TabularMDP, policy) -> tuple[np.ndarray, np.ndarray]:
    policy = np.asarray(policy)
    if policy.ndim == 1:
        idx = policy.astype(int)
        T_pi = mdp.transitions[np.arange(mdp.n_states), idx]
        R_pi = mdp.rewards[np.arange(mdp.n_states), idx]
    elif policy.ndim == 2:
        T_pi = np.einsum("sa,sat->st", policy, mdp.transitions)
        R_pi = (policy * mdp.rewards).sum(axis=1)
    else:
        raise ValueError("policy must be (S,) action indices or (S, A) probabilities")
    R_pi = R_pi.copy()
    R_pi[mdp.terminal] = 0.0
    return T_pi, R_pi


def exact_policy_eval(
    mdp: TabularMDP, policy, gamma: float, tol: float, max_iter: int = 1_000_000
) -> np.ndarray:
    """Iterative linear Bellman evaluation of a fixed policy to tolerance."""
    if not 0 <= gamma < 1:
        raise ValueError("policy evaluation requires gamma in [0, 1)")
    T_pi, R_pi = _policy_matrices(mdp, policy)
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        V_new = R_pi + gamma * T_pi @ V
        V_new[mdp.terminal] = 0.0
        delta = np.abs(V_new - V).max()
        V = V_new
        if delta < tol:
            return V
    raise RuntimeError(f"policy evaluation did not converge within {max_iter} sweeps")


def finite_horizon_policy_value(mdp: TabularMDP, policy, horizon: int) -> float:
    """Exact expected undiscounted return of a policy over ``horizon`` steps,
    starting from the MDP's start distribution.  Matches what episode rollouts
    with horizon truncation measure."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    T_pi, R_pi = _policy_matrices(mdp, policy)
    V = np.zeros(mdp.n_states)
    for _ in range(horizon):
        V = R_pi + T_pi @ V
        V[mdp.terminal] = 0.0
    return float(mdp.start @ V)


def policy_table_from_agent(mdp: TabularMDP, policy, obs_transform=None) -> np.ndarray:
    """Tabulate an observation-based agent policy over the MDP's states.

    ``obs_transform`` mirrors any observation wrapper the agent was trained
    behind (e.g. zeroing the wind entry); identity when omitted.
    """
    table = np.zeros(mdp.n_states, dtype=int)
    for s in range(mdp.n_states):
        if mdp.terminal[s]:
            continue
        obs = mdp.observations[s]
        if obs_transform is not None:
            obs = obs_transform(obs.copy())
        table[s] = int(policy.action_index(obs))
    return table


def start_state_value(mdp: TabularMDP, values: np.ndarray) -> float:
    """Expected value under the start distribution."""
    return float(mdp.start @ values)
