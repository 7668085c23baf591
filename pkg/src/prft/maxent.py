"""Discrete-action maximum-entropy RL: soft values, Boltzmann policies,
replay, and soft Q-learning updates with a slowly synced target network.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nets
from .errors import ContractViolationError, DivergenceError

REWARD_TRUE = "true"
REWARD_PREDICTED = "predicted"


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    reward_source: str = REWARD_TRUE


@dataclass(frozen=True)
class Batch:
    obs: np.ndarray  # (B, obs_dim)
    actions: np.ndarray  # (B,) int
    rewards: np.ndarray  # (B,)
    next_obs: np.ndarray  # (B, obs_dim)
    dones: np.ndarray  # (B,) float 0/1

    def __len__(self) -> int:
        return self.obs.shape[0]


class ReplayBuffer:
    """Bounded FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, seed: int = 0):
        if capacity < 1:
            raise ContractViolationError("capacity must be >= 1")
        self.capacity = capacity
        self._obs = np.zeros((capacity, obs_dim))
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._next_obs = np.zeros((capacity, obs_dim))
        self._dones = np.zeros(capacity)
        self._sources = np.zeros(capacity, dtype=np.uint8)  # 0 true, 1 predicted
        self._rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        i = self._next
        self._obs[i] = t.obs
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._next_obs[i] = t.next_obs
        self._dones[i] = float(t.done)
        self._sources[i] = 0 if t.reward_source == REWARD_TRUE else 1
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        if self._size == 0:
            raise ContractViolationError("sampling from an empty buffer")
        idx = self._rng.integers(0, self._size, size=batch_size)
        return Batch(obs=self._obs[idx], actions=self._actions[idx],
                     rewards=self._rewards[idx], next_obs=self._next_obs[idx],
                     dones=self._dones[idx])

    def reward_sources(self) -> np.ndarray:
        """Provenance tags of the stored transitions (0 true, 1 predicted)."""
        return self._sources[: self._size].copy()

    def rewards_stored(self) -> np.ndarray:
        return self._rewards[: self._size].copy()


@dataclass(frozen=True)
class QFunction:
    spec: nets.NetworkSpec
    network: nets.NetworkParams
    target_network: nets.NetworkParams
    alpha: float = 0.05
    gamma: float = 0.97

    def __post_init__(self):
        if self.alpha <= 0:
            raise ContractViolationError("alpha must be positive")
        if not 0 < self.gamma < 1:
            raise ContractViolationError("gamma must be in (0, 1)")

    @property
    def n_actions(self) -> int:
        return self.spec.layer_sizes[-1]


def make_q_function(obs_dim: int, n_actions: int, hidden: tuple[int, ...],
                    seed: int, alpha: float = 0.05, gamma: float = 0.97,
                    activation: str = "relu") -> QFunction:
    spec = nets.NetworkSpec(layer_sizes=(obs_dim, *hidden, n_actions), activation=activation)
    params = nets.init_params(spec, seed)
    return QFunction(spec=spec, network=params, target_network=params,
                     alpha=alpha, gamma=gamma)


def soft_value(q_values: np.ndarray, alpha: float) -> np.ndarray | float:
    """alpha * logsumexp(q / alpha) along the last axis, max-subtracted."""
    if alpha <= 0:
        raise ContractViolationError("alpha must be positive")
    q = np.asarray(q_values, dtype=float)
    m = q.max(axis=-1, keepdims=True)
    v = m[..., 0] + alpha * np.log(np.exp((q - m) / alpha).sum(axis=-1))
    return float(v) if q.ndim == 1 else v


def boltzmann_policy(q_values: np.ndarray, alpha: float) -> np.ndarray:
    """Softmax of q / alpha; strictly positive, sums to one."""
    if alpha <= 0:
        raise ContractViolationError("alpha must be positive")
    q = np.asarray(q_values, dtype=float)
    z = (q - q.max(axis=-1, keepdims=True)) / alpha
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_entropy(dist: np.ndarray) -> float:
    p = np.asarray(dist, dtype=float)
    nz = p > 0.0
    return float(-(p[nz] * np.log(p[nz])).sum())


def td_target(batch: Batch, q: QFunction) -> np.ndarray:
    """y = r + gamma * (1 - done) * soft_value(target(next_obs))."""
    if len(batch) == 0:
        raise ContractViolationError("empty batch")
    next_q, _ = nets.forward(q.target_network, batch.next_obs, q.spec.activation)
    v_next = soft_value(next_q, q.alpha)
    return batch.rewards + q.gamma * (1.0 - batch.dones) * v_next


def q_update(q: QFunction, batch: Batch, opt: nets.OptimizerState,
             tau: float = 0.01) -> tuple[QFunction, nets.OptimizerState, float]:
    """One adaptive-moment step on mean squared TD error, then target sync.

    Targets are treated as constants (computed from the target network).
    Returns the pre-update loss.
    """
    y = td_target(batch, q)
    q_all, tape = nets.forward(q.network, batch.obs, q.spec.activation)
    b = len(batch)
    picked = q_all[np.arange(b), batch.actions]
    residual = picked - y
    loss = float(np.mean(residual**2))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite TD loss {loss}")
    gout = np.zeros_like(q_all)
    gout[np.arange(b), batch.actions] = 2.0 * residual / b
    grads, _ = nets.backward(q.network, tape, gout, q.spec.activation)
    network2, opt2 = nets.adam_step(q.network, grads, opt)
    target2 = nets.soft_sync(q.target_network, network2, tau)
    return replace(q, network=network2, target_network=target2), opt2, loss


def q_values(q: QFunction, obs: np.ndarray) -> np.ndarray:
    out, _ = nets.forward(q.network, obs, q.spec.activation)
    return out


def act(q: QFunction, obs: np.ndarray, mode: str = "sample",
        rng: np.random.Generator | None = None) -> int:
    """Boltzmann sample or greedy argmax (lowest index wins ties)."""
    qv = q_values(q, obs)
    if mode == "greedy":
        return int(np.argmax(qv))
    if mode == "sample":
        if rng is None:
            raise ContractViolationError("sample mode needs an rng")
        p = boltzmann_policy(qv, q.alpha)
        return int(rng.choice(len(p), p=p))
    raise ContractViolationError(f"unknown action mode {mode!r}")
