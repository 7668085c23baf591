"""Exact tabular oracles and theoretical checks.

Soft and hard value iteration on small MDPs, affine reward transforms, the
robust-reward-set margin (discrete-action, unit entropy temperature), and a
grid discretization of the point-mass environment that bridges the learned
agents to exact backups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .envs import MAX_DIST, N_ACTIONS, EnvConfig, EnvState, step_state
from .errors import ContractViolationError


@dataclass(frozen=True)
class TabularMDP:
    transitions: np.ndarray  # (S, A, S), each row a distribution
    rewards: np.ndarray  # (S, A)
    gamma: float
    terminal: np.ndarray  # (S,) bool; terminal states have zero future value

    def __post_init__(self):
        p = self.transitions
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ContractViolationError("transitions must be (S, A, S)")
        if np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-12):
            raise ContractViolationError("transition rows must sum to 1")
        if not np.all(np.isfinite(self.rewards)):
            raise ContractViolationError("rewards must be finite")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def random_mdp(n_states: int, n_actions: int, gamma: float,
               rng: np.random.Generator) -> TabularMDP:
    """Dense random MDP with Dirichlet transition rows and uniform rewards."""
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(transitions=p, rewards=r, gamma=gamma,
                      terminal=np.zeros(n_states, dtype=bool))


def _next_values(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    v_eff = np.where(mdp.terminal, 0.0, v)
    return mdp.rewards + mdp.gamma * mdp.transitions @ v_eff


def soft_value_iteration(mdp: TabularMDP, alpha: float, tol: float = 1e-10,
                         max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of the soft Bellman operator; returns the (S, A) Q table."""
    if alpha <= 0 or tol <= 0:
        raise ContractViolationError("alpha and tol must be positive")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        m = q.max(axis=1, keepdims=True)
        v = m[:, 0] + alpha * np.log(np.exp((q - m) / alpha).sum(axis=1))
        q_new = _next_values(mdp, v)
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    raise ContractViolationError("soft value iteration did not converge")


def value_iteration(mdp: TabularMDP, tol: float = 1e-10,
                    max_iter: int = 100_000) -> np.ndarray:
    """Standard Bellman-optimality iteration; returns the (S, A) Q* table."""
    if tol <= 0:
        raise ContractViolationError("tol must be positive")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        q_new = _next_values(mdp, q.max(axis=1))
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    raise ContractViolationError("value iteration did not converge")


def finite_horizon_values(mdp: TabularMDP, horizon: int,
                          discount: float = 1.0) -> np.ndarray:
    """Backward induction: optimal undiscounted-by-default V_t for t = 0..T.

    Returns an (T+1, S) array where row t is the optimal value with t steps
    remaining.
    """
    v = np.zeros((horizon + 1, mdp.n_states))
    for t in range(1, horizon + 1):
        v_eff = np.where(mdp.terminal, 0.0, v[t - 1])
        q = mdp.rewards + discount * mdp.transitions @ v_eff
        v[t] = q.max(axis=1)
    return v


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Per-state argmax with lowest-index tie-breaking."""
    return np.argmax(q, axis=1)


def affine_transform(mdp: TabularMDP, k: float, b: float) -> TabularMDP:
    """Reward map r' = k*r + b with k > 0; dynamics untouched."""
    if k <= 0:
        raise ContractViolationError("affine transform requires k > 0")
    return replace(mdp, rewards=k * mdp.rewards + b)


@dataclass(frozen=True)
class RobustSetReport:
    margin: float
    std_error: float
    epsilon: float
    member: bool
    per_step_terms: tuple[float, ...]  # mean step term per timestep


def robust_set_margin(mdp: TabularMDP, r_tilde: np.ndarray, policy: np.ndarray,
                      n_rollouts: int, horizon: int, rng: np.random.Generator,
                      epsilon: float = 0.0,
                      start_state: int | None = None) -> RobustSetReport:
    """Monte Carlo estimate of E_pi[sum_t log sum_a' exp(R(s_t,a') - r~(s_t,a'))].

    The adversarial-reward membership margin at unit entropy temperature;
    the continuous-action inner integral becomes a sum over the discrete
    action set. `policy` is an (S, A) row-stochastic matrix with full
    support.
    """
    r_tilde = np.asarray(r_tilde, dtype=float)
    if r_tilde.shape != mdp.rewards.shape:
        raise ContractViolationError("r_tilde shape mismatch")
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ContractViolationError("policy shape mismatch")
    if np.any(policy <= 0.0):
        raise ContractViolationError("policy must have support everywhere")
    if np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise ContractViolationError("policy rows must sum to 1")

    diff = mdp.rewards - r_tilde
    m = diff.max(axis=1, keepdims=True)
    step_term = m[:, 0] + np.log(np.exp(diff - m).sum(axis=1))  # per state

    totals = np.empty(n_rollouts)
    term_sums = np.zeros(horizon)
    states = np.arange(mdp.n_states)
    for i in range(n_rollouts):
        s = int(rng.integers(mdp.n_states)) if start_state is None else start_state
        total = 0.0
        for t in range(horizon):
            total += step_term[s]
            term_sums[t] += step_term[s]
            a = int(rng.choice(mdp.n_actions, p=policy[s]))
            s = int(rng.choice(states, p=mdp.transitions[s, a]))
        totals[i] = total
    margin = float(totals.mean())
    std_error = float(totals.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return RobustSetReport(margin=margin, std_error=std_error, epsilon=epsilon,
                           member=margin <= epsilon,
                           per_step_terms=tuple(term_sums / n_rollouts))


@dataclass(frozen=True)
class DiscretizedEnv:
    """Grid snap of the point-mass environment for a fixed goal position."""
    mdp: TabularMDP
    grid_size: int
    goal: tuple[float, float]
    env_config: EnvConfig
    cell_centers: np.ndarray  # (G*G, 2) positions

    def state_index(self, pos: tuple[float, float]) -> int:
        g = self.grid_size
        ix = int(round(pos[0] * (g - 1)))
        iy = int(round(pos[1] * (g - 1)))
        ix = min(max(ix, 0), g - 1)
        iy = min(max(iy, 0), g - 1)
        return iy * g + ix


def discretize_env(env_config: EnvConfig, goal: tuple[float, float] = (0.75, 0.75),
                   grid_size: int = 21, gamma: float = 0.97) -> DiscretizedEnv:
    """Deterministic tabular MDP over a G x G snap of agent positions.

    Rewards are the environment's true reward at the landing cell center.
    The horizon is handled by finite-horizon backups on the returned MDP;
    no state is marked terminal.
    """
    g = grid_size
    coords = np.linspace(0.0, 1.0, g)
    centers = np.array([(x, y) for y in coords for x in coords])
    n = g * g
    p = np.zeros((n, N_ACTIONS, n))
    r = np.zeros((n, N_ACTIONS))
    helper = DiscretizedEnv(mdp=None, grid_size=g, goal=goal,  # type: ignore[arg-type]
                            env_config=env_config, cell_centers=centers)
    for s in range(n):
        pos = (float(centers[s, 0]), float(centers[s, 1]))
        for a in range(N_ACTIONS):
            nxt = step_state(EnvState(agent_pos=pos, goal_pos=goal), a, env_config)
            s2 = helper.state_index(nxt.agent_pos)
            p[s, a, s2] = 1.0
            landed = centers[s2]
            d = math.dist((landed[0], landed[1]), goal)
            r[s, a] = 1.0 - d / MAX_DIST
    mdp = TabularMDP(transitions=p, rewards=r, gamma=gamma,
                     terminal=np.zeros(n, dtype=bool))
    return replace(helper, mdp=mdp)


def export_q_table_csv(q: np.ndarray, path: str) -> None:
    """Write (state, action, q) rows for inspection."""
    with open(path, "w", newline="\n") as f:
        f.write("state,action,q\n")
        for s in range(q.shape[0]):
            for a in range(q.shape[1]):
                f.write(f"{s},{a},{q[s, a]:.9g}\n")
