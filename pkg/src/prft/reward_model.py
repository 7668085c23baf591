"""Reward prediction from (observation, action) pairs.

The predictor is a dense network on the flattened observation concatenated
with a one-hot action. Trained on true rewards in the source domain; once
frozen it becomes immutable and is the only reward source available during
target-domain fine-tuning. Predictions are deliberately unclamped so the
degradation diagnostics can expose slope/intercept structure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nets
from .errors import (ContractViolationError, DegenerateFitError,
                     DivergenceError, FrozenModelError, ModelNotFrozenError)
from .maxent import REWARD_PREDICTED, Transition


@dataclass(frozen=True)
class RewardPredictor:
    spec: nets.NetworkSpec
    network: nets.NetworkParams
    action_count: int
    frozen: bool = False


def make_reward_predictor(obs_dim: int, action_count: int,
                          hidden: tuple[int, ...], seed: int,
                          activation: str = "relu") -> RewardPredictor:
    spec = nets.NetworkSpec(layer_sizes=(obs_dim + action_count, *hidden, 1),
                            activation=activation)
    return RewardPredictor(spec=spec, network=nets.init_params(spec, seed),
                           action_count=action_count)


def _inputs(model: RewardPredictor, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    if np.any(actions < 0) or np.any(actions >= model.action_count):
        raise ContractViolationError("action index out of range")
    onehot = np.zeros((obs.shape[0], model.action_count))
    onehot[np.arange(obs.shape[0]), actions] = 1.0
    return np.concatenate([obs, onehot], axis=1)


def predict(model: RewardPredictor, obs: np.ndarray, action: int) -> float:
    out, _ = nets.forward(model.network, _inputs(model, obs, np.array([action])),
                          model.spec.activation)
    return float(out[0, 0])


def predict_batch(model: RewardPredictor, obs: np.ndarray,
                  actions: np.ndarray) -> np.ndarray:
    out, _ = nets.forward(model.network, _inputs(model, obs, actions),
                          model.spec.activation)
    return out[:, 0]


def reward_train_step(model: RewardPredictor, obs: np.ndarray,
                      actions: np.ndarray, rewards: np.ndarray,
                      opt: nets.OptimizerState
                      ) -> tuple[RewardPredictor, nets.OptimizerState, float]:
    """One adaptive-moment step on mean squared prediction error.

    Returns the pre-step loss. Refuses to touch a frozen model.
    """
    if model.frozen:
        raise FrozenModelError("reward_train_step on a frozen model")
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ContractViolationError("empty batch")
    x = _inputs(model, obs, actions)
    out, tape = nets.forward(model.network, x, model.spec.activation)
    residual = out[:, 0] - rewards
    loss = float(np.mean(residual**2))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite reward-model loss")
    gout = (2.0 * residual / rewards.size)[:, None]
    grads, _ = nets.backward(model.network, tape, gout, model.spec.activation)
    network2, opt2 = nets.adam_step(model.network, grads, opt)
    return replace(model, network=network2), opt2, loss


def freeze(model: RewardPredictor) -> RewardPredictor:
    return replace(model, frozen=True)


def relabel(model: RewardPredictor, transitions: list[Transition]) -> list[Transition]:
    """Replace each reward with the frozen model's prediction, tagged predicted."""
    if not model.frozen:
        raise ModelNotFrozenError("relabel requires a frozen model")
    if not transitions:
        return []
    obs = np.stack([t.obs for t in transitions])
    actions = np.array([t.action for t in transitions])
    predicted = predict_batch(model, obs, actions)
    return [replace(t, reward=float(r), reward_source=REWARD_PREDICTED)
            for t, r in zip(transitions, predicted)]


@dataclass(frozen=True)
class FitDiagnostic:
    slope: float
    intercept: float
    r_squared: float
    mse: float
    sample_count: int


def linear_fit_diagnostic(predicted: np.ndarray, true: np.ndarray) -> FitDiagnostic:
    """Ordinary least squares of predicted rewards against true rewards.

    mse is the raw prediction error mean((r_hat - r)^2), not the regression
    residual.
    """
    r_hat = np.asarray(predicted, dtype=float)
    r = np.asarray(true, dtype=float)
    if r_hat.shape != r.shape or r_hat.ndim != 1:
        raise ContractViolationError("predicted/true must be equal-length vectors")
    n = r.size
    if n < 2:
        raise ContractViolationError("need at least 2 pairs")
    var_r = np.var(r)
    if var_r == 0.0:
        raise DegenerateFitError("constant true rewards; slope undefined")
    slope = float(np.cov(r, r_hat, bias=True)[0, 1] / var_r)
    intercept = float(np.mean(r_hat) - slope * np.mean(r))
    fitted = slope * r + intercept
    ss_res = float(np.sum((r_hat - fitted) ** 2))
    ss_tot = float(np.sum((r_hat - np.mean(r_hat)) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    mse = float(np.mean((r_hat - r) ** 2))
    return FitDiagnostic(slope=slope, intercept=intercept, r_squared=r_squared,
                         mse=mse, sample_count=n)
