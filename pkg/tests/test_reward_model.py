import numpy as np
import pytest

from prft import nets, reward_model
from prft.errors import (ContractViolationError, DegenerateFitError,
                        FrozenModelError, ModelNotFrozenError)
from prft.maxent import REWARD_PREDICTED, REWARD_TRUE, Transition
from prft.reward_model import (freeze, linear_fit_diagnostic,
                               make_reward_predictor, predict, predict_batch,
                               relabel, reward_train_step)

OBS_DIM = 12
N_ACTIONS = 5


def small_model(seed=0, hidden=(16,)):
    return make_reward_predictor(OBS_DIM, N_ACTIONS, hidden, seed)


def zero_model():
    model = small_model()
    zeros = nets.NetworkParams(
        weights=tuple(np.zeros_like(w) for w in model.network.weights),
        biases=tuple(np.zeros_like(b) for b in model.network.biases))
    return reward_model.RewardPredictor(spec=model.spec, network=zeros,
                                        action_count=N_ACTIONS)


def params_checksum(params):
    return b"".join(w.tobytes() for w in params.weights + params.biases)


def test_predict_zero_network():
    model = zero_model()
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert predict(model, rng.random(OBS_DIM), 2) == 0.0


def test_predict_deterministic():
    model = small_model(3)
    obs = np.random.default_rng(1).random(OBS_DIM)
    assert predict(model, obs, 1) == predict(model, obs, 1)


def test_action_changes_network_input():
    model = small_model()
    obs = np.zeros(OBS_DIM)
    x0 = reward_model._inputs(model, obs, np.array([0]))
    x3 = reward_model._inputs(model, obs, np.array([3]))
    assert x0.shape == (1, OBS_DIM + N_ACTIONS)
    assert not np.array_equal(x0, x3)
    assert x0[0, OBS_DIM] == 1.0 and x3[0, OBS_DIM + 3] == 1.0


def test_predict_rejects_bad_action():
    with pytest.raises(ContractViolationError):
        predict(small_model(), np.zeros(OBS_DIM), N_ACTIONS)


def test_train_step_exact_model_zero_loss():
    model = zero_model()
    opt = nets.init_optimizer(model.network)
    obs = np.random.default_rng(2).random((8, OBS_DIM))
    actions = np.arange(8) % N_ACTIONS
    model2, _, loss = reward_train_step(model, obs, actions, np.zeros(8), opt)
    assert loss < 1e-12
    assert params_checksum(model2.network) == params_checksum(model.network)


def test_train_step_unit_loss():
    model = zero_model()
    opt = nets.init_optimizer(model.network)
    obs = np.tile(np.random.default_rng(3).random(OBS_DIM), (4, 1))
    _, _, loss = reward_train_step(model, obs, np.zeros(4, int), np.ones(4), opt)
    assert loss == pytest.approx(1.0)


def test_train_step_frozen_raises():
    model = freeze(small_model())
    opt = nets.init_optimizer(model.network)
    with pytest.raises(FrozenModelError):
        reward_train_step(model, np.zeros((2, OBS_DIM)), np.zeros(2, int),
                          np.zeros(2), opt)


def test_training_beats_linear_baseline_on_fixed_dataset():
    # 1k-sample synthetic source-style dataset: reward is a smooth nonlinear
    # function of the observation; 5k steps must reach mse < 0.01 and beat
    # ordinary linear regression on the same data.
    rng = np.random.default_rng(7)
    obs = rng.random((1000, OBS_DIM))
    actions = rng.integers(0, N_ACTIONS, 1000)
    rewards = 1.0 - np.abs(obs[:, 0] - obs[:, 1]) * (1.0 + 0.2 * actions / N_ACTIONS)
    model = small_model(1, hidden=(64, 64))
    opt = nets.init_optimizer(model.network, learning_rate=1e-3)
    losses = []
    for step in range(5000):
        idx = rng.integers(0, 1000, size=128)
        model, opt, loss = reward_train_step(model, obs[idx], actions[idx],
                                             rewards[idx], opt)
        losses.append(loss)
    predicted = predict_batch(model, obs, actions)
    final_mse = float(np.mean((predicted - rewards) ** 2))
    x = np.concatenate([obs, np.eye(N_ACTIONS)[actions], np.ones((1000, 1))], axis=1)
    coef, *_ = np.linalg.lstsq(x, rewards, rcond=None)
    linear_mse = float(np.mean((x @ coef - rewards) ** 2))
    assert final_mse < 0.01
    assert final_mse < linear_mse

    # Descent property: means of consecutive disjoint 500-step windows are
    # non-increasing for at least 95% of adjacent pairs.
    means = [np.mean(losses[i:i + 500]) for i in range(0, 5000, 500)]
    drops = sum(means[i + 1] <= means[i] for i in range(len(means) - 1))
    assert drops / (len(means) - 1) >= 0.95


def _transitions(n, rng):
    return [Transition(rng.random(OBS_DIM), int(rng.integers(N_ACTIONS)),
                       float(rng.random()), rng.random(OBS_DIM), False,
                       REWARD_TRUE) for _ in range(n)]


def test_relabel_requires_frozen():
    with pytest.raises(ModelNotFrozenError):
        relabel(small_model(), _transitions(2, np.random.default_rng(0)))


def test_relabel_empty():
    assert relabel(freeze(small_model()), []) == []


def test_relabel_tags_and_idempotence():
    model = freeze(small_model(5))
    ts = _transitions(6, np.random.default_rng(4))
    out1 = relabel(model, ts)
    assert all(t.reward_source == REWARD_PREDICTED for t in out1)
    assert all(np.array_equal(a.obs, b.obs) and a.action == b.action
               and a.done == b.done for a, b in zip(ts, out1))
    out2 = relabel(model, out1)
    assert [t.reward for t in out1] == [t.reward for t in out2]


def test_freeze_discipline_checksum():
    model = freeze(small_model(6))
    before = params_checksum(model.network)
    rng = np.random.default_rng(5)
    for _ in range(3):
        relabel(model, _transitions(4, rng))
        predict(model, rng.random(OBS_DIM), 0)
    assert params_checksum(model.network) == before


def test_linear_fit_identity():
    fit = linear_fit_diagnostic(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
    assert fit.slope == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(0.0)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.mse == pytest.approx(0.0)
    assert fit.sample_count == 3


def test_linear_fit_two_points():
    fit = linear_fit_diagnostic(np.array([1.0, 3.0]), np.array([0.0, 1.0]))
    assert fit.slope == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(1.0)
    assert fit.r_squared == pytest.approx(1.0)


def test_linear_fit_recovers_synthetic_transform():
    rng = np.random.default_rng(11)
    r = rng.uniform(0.0, 1.0, 1000)
    r_hat = 0.5 * r + 0.2 + rng.normal(0.0, 0.01, 1000)
    fit = linear_fit_diagnostic(r_hat, r)
    assert 0.45 <= fit.slope <= 0.55
    assert 0.17 <= fit.intercept <= 0.23
    # Independent OLS oracle on the same sample.
    k_ref, b_ref = np.polyfit(r, r_hat, 1)
    assert fit.slope == pytest.approx(k_ref, abs=1e-9)
    assert fit.intercept == pytest.approx(b_ref, abs=1e-9)


def test_linear_fit_degenerate():
    with pytest.raises(DegenerateFitError):
        linear_fit_diagnostic(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    with pytest.raises(ContractViolationError):
        linear_fit_diagnostic(np.array([1.0]), np.array([0.5]))
