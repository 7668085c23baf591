"""Joint source training and reward-free target fine-tuning.

`train_source` learns a soft Q-function and a reward predictor side by side
from shared replay batches. `finetune_target` freezes the predictor and
adapts the policy in a visually shifted domain where the true reward is
physically unreachable: the fine-tune loop only ever calls the blind step
of a `MonitoredEnv`, which counts every true-reward read so the reward-free
guarantee is checkable after the fact.

Also here: greedy evaluation with matched episode seeds across domains,
the overlay observation augmentation, and the inverse-dynamics fine-tuning
baseline that adapts only the first ("encoder") layer of the Q-network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import envs, nets, reward_model
from .envs import DomainSpec, EnvConfig, EnvState
from .errors import ConfigError, ContractViolationError
from .maxent import (REWARD_PREDICTED, REWARD_TRUE, Batch, QFunction,
                     ReplayBuffer, Transition, act, make_q_function, q_update)
from .reward_model import RewardPredictor, freeze, make_reward_predictor, predict
from .seeding import stream_rng, stream_seed

METRIC_COLUMNS = ("phase", "step", "episode", "td_loss", "reward_loss",
                  "idm_loss", "return_true", "return_predicted", "kappa", "seed")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    target_intensity: float = 0.4
    master_seed: int = 0
    train_steps: int = 60_000
    finetune_steps: int = 20_000
    eval_episodes: int = 20
    alpha: float = 0.05
    gamma: float = 0.97
    tau: float = 0.01
    batch_size: int = 128
    buffer_capacity: int = 100_000
    q_lr: float = 1e-3
    reward_lr: float = 1e-3
    hidden_sizes: tuple[int, ...] = (256, 256)
    activation: str = "relu"
    augmentation: str = "none"  # none | overlay
    overlay_lambda_max: float = 0.5
    reward_model_on_augmented: bool = False
    baseline: str = "none"  # none | idm
    finetune_reset_optimizer: bool = True
    finetune_exploration: str = "sample"  # sample | greedy

    def __post_init__(self):
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.augmentation not in ("none", "overlay"):
            raise ConfigError(f"unknown augmentation {self.augmentation!r}")
        if self.baseline not in ("none", "idm"):
            raise ConfigError(f"unknown baseline {self.baseline!r}")
        if self.finetune_exploration not in ("sample", "greedy"):
            raise ConfigError(f"unknown exploration {self.finetune_exploration!r}")

    def target_domain(self) -> DomainSpec:
        return envs.make_domain(self.target_intensity,
                                stream_seed(self.master_seed, "target-domain"))


SOURCE_DOMAIN = DomainSpec()


class MonitoredEnv:
    """Environment wrapper that counts every true-reward read.

    `step` returns the reward and bumps the counter; `step_blind` advances
    state and observation without ever computing a reward. Reward-free
    phases must use only `step_blind`.
    """

    def __init__(self, env_config: EnvConfig, domain: DomainSpec):
        self.env_config = env_config
        self.domain = domain
        self.reward_reads = 0

    def reset(self, episode_seed: int) -> tuple[EnvState, np.ndarray]:
        return envs.reset(self.env_config, self.domain, episode_seed)

    def step(self, state: EnvState, action: int) -> tuple[EnvState, np.ndarray, float, bool]:
        self.reward_reads += 1
        return envs.step(state, action, self.env_config, self.domain)

    def step_blind(self, state: EnvState, action: int) -> tuple[EnvState, np.ndarray, bool]:
        nxt = envs.step_state(state, action, self.env_config)
        obs = envs.render(nxt, self.domain, self.env_config)
        return nxt, obs, nxt.step_count >= self.env_config.horizon


@dataclass(frozen=True)
class EvalReport:
    mean_return: float
    std_return: float
    per_episode_returns: tuple[float, ...]
    domain_intensity: float
    phase: str


def _metric_row(phase: str, step: int, episode: int, kappa: float, seed: int,
                td_loss: float = math.nan, reward_loss: float = math.nan,
                idm_loss: float = math.nan, return_true: float = math.nan,
                return_predicted: float = math.nan) -> dict:
    return {"phase": phase, "step": step, "episode": episode,
            "td_loss": td_loss, "reward_loss": reward_loss, "idm_loss": idm_loss,
            "return_true": return_true, "return_predicted": return_predicted,
            "kappa": kappa, "seed": seed}


def augment_overlay(obs: np.ndarray, rng: np.random.Generator,
                    lambda_max: float, image_size: tuple[int, int]) -> np.ndarray:
    """Blend an observation with a fresh procedural noise image.

    Blend weight is uniform in [0, lambda_max]; lambda_max = 0 is an exact
    no-op. Accepts a single flat observation or a batch matrix.
    """
    if not 0.0 <= lambda_max <= 1.0:
        raise ContractViolationError("lambda_max must be in [0, 1]")
    obs = np.asarray(obs, dtype=float)
    if lambda_max == 0.0:
        return obs.copy()
    h, w = image_size
    single = obs.ndim == 1
    batch = obs[None, :] if single else obs
    b = batch.shape[0]
    # Batched smooth value noise: bilinear interpolation of random 4x4
    # lattices, one lattice and one blend weight per row.
    lat = 4
    rr = np.linspace(0.0, lat - 1.0, h)
    cc = np.linspace(0.0, lat - 1.0, w)
    r0 = np.floor(rr).astype(int)
    c0 = np.floor(cc).astype(int)
    r1 = np.minimum(r0 + 1, lat - 1)
    c1 = np.minimum(c0 + 1, lat - 1)
    fr = (rr - r0)[:, None]
    fc = (cc - c0)[None, :]
    lam = rng.uniform(0.0, lambda_max, size=b)
    grid = rng.uniform(0.0, 1.0, size=(b, 3, lat, lat))
    g00 = grid[:, :, r0][:, :, :, c0]
    g01 = grid[:, :, r0][:, :, :, c1]
    g10 = grid[:, :, r1][:, :, :, c0]
    g11 = grid[:, :, r1][:, :, :, c1]
    noise = ((g00 * (1 - fc) + g01 * fc) * (1 - fr)
             + (g10 * (1 - fc) + g11 * fc) * fr).reshape(b, -1)
    out = np.clip((1.0 - lam[:, None]) * batch + lam[:, None] * noise, 0.0, 1.0)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Inverse dynamics model (action classification from consecutive encodings)

def make_idm_trunk(hidden_sizes: tuple[int, ...], n_actions: int, seed: int,
                   activation: str = "relu") -> tuple[nets.NetworkSpec, nets.NetworkParams]:
    h1 = hidden_sizes[0]
    tail = hidden_sizes[1:] if len(hidden_sizes) > 1 else ()
    spec = nets.NetworkSpec(layer_sizes=(2 * h1, *tail, n_actions), activation=activation)
    return spec, nets.init_params(spec, seed)


def _encode(q: QFunction, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First hidden layer of the Q-network: pre-activation and features."""
    z = np.atleast_2d(obs) @ q.network.weights[0] + q.network.biases[0]
    f = np.maximum(z, 0.0) if q.spec.activation == "relu" else np.tanh(z)
    return z, f


def _idm_logits(trunk_spec, trunk, q, obs, next_obs):
    _, f1 = _encode(q, obs)
    _, f2 = _encode(q, next_obs)
    x = np.concatenate([f1, f2], axis=1)
    logits, tape = nets.forward(trunk, x, trunk_spec.activation)
    return logits, tape


def _cross_entropy(logits: np.ndarray, actions: np.ndarray) -> tuple[float, np.ndarray]:
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(b), actions].mean())
    gout = np.exp(logp)
    gout[np.arange(b), actions] -= 1.0
    return loss, gout / b


def idm_train_step(trunk_spec, trunk, trunk_opt, q: QFunction,
                   batch: Batch) -> tuple[nets.NetworkParams, nets.OptimizerState, float]:
    """Cross-entropy update of the IDM trunk on encoder features (trunk only)."""
    logits, tape = _idm_logits(trunk_spec, trunk, q, batch.obs, batch.next_obs)
    loss, gout = _cross_entropy(logits, batch.actions)
    grads, _ = nets.backward(trunk, tape, gout, trunk_spec.activation)
    trunk2, opt2 = nets.adam_step(trunk, grads, trunk_opt)
    return trunk2, opt2, loss


def idm_accuracy(trunk_spec, trunk, q: QFunction, obs: np.ndarray,
                 next_obs: np.ndarray, actions: np.ndarray) -> float:
    logits, _ = _idm_logits(trunk_spec, trunk, q, obs, next_obs)
    return float(np.mean(np.argmax(logits, axis=1) == actions))


# ---------------------------------------------------------------------------
# Phase drivers

@dataclass(frozen=True)
class SourceResult:
    q: QFunction
    model: RewardPredictor
    metrics: list[dict]
    idm_spec: nets.NetworkSpec | None = None
    idm_trunk: nets.NetworkParams | None = None


def train_source(config: RunConfig, snapshot_every: int | None = None,
                 on_snapshot=None) -> SourceResult:
    """Joint source-domain training of the policy and the reward predictor.

    One environment step per iteration; once the buffer holds a full batch,
    each iteration also applies one Q-update and one reward-model update on
    the same sampled batch. With overlay augmentation the Q-head consumes
    augmented observations while TD targets use clean next observations.
    When snapshot_every is set, on_snapshot(steps_done, q, model) fires at
    every multiple of it (checkpoint cadence; no effect on the run itself).
    """
    env_cfg = config.env
    obs_dim = env_cfg.obs_dim
    ms = config.master_seed
    q = make_q_function(obs_dim, env_cfg.action_count, config.hidden_sizes,
                        stream_seed(ms, "q-init"), alpha=config.alpha,
                        gamma=config.gamma, activation=config.activation)
    model = make_reward_predictor(obs_dim, env_cfg.action_count,
                                  config.hidden_sizes, stream_seed(ms, "reward-init"),
                                  activation=config.activation)
    q_opt = nets.init_optimizer(q.network, learning_rate=config.q_lr)
    r_opt = nets.init_optimizer(model.network, learning_rate=config.reward_lr)
    buffer = ReplayBuffer(config.buffer_capacity, obs_dim, stream_seed(ms, "train-buffer"))
    act_rng = stream_rng(ms, "train-act")
    aug_rng = stream_rng(ms, "train-augment")

    idm_spec = idm_trunk = idm_opt = None
    if config.baseline == "idm":
        idm_spec, idm_trunk = make_idm_trunk(config.hidden_sizes, env_cfg.action_count,
                                             stream_seed(ms, "idm-init"), config.activation)
        idm_opt = nets.init_optimizer(idm_trunk, learning_rate=config.q_lr)

    metrics: list[dict] = []
    episode = 0
    state, obs = envs.reset(env_cfg, SOURCE_DOMAIN, stream_seed(ms, "train-episode", 0))
    ep_return = 0.0
    for step_i in range(config.train_steps):
        a = act(q, obs, "sample", act_rng)
        state2, obs2, r, done = envs.step(state, a, env_cfg, SOURCE_DOMAIN)
        buffer.add(Transition(obs, a, r, obs2, done, REWARD_TRUE))
        ep_return += r

        td_loss = r_loss = idm_loss = math.nan
        if len(buffer) >= config.batch_size:
            batch = buffer.sample(config.batch_size)
            q_batch = batch
            if config.augmentation == "overlay":
                q_batch = replace(batch, obs=augment_overlay(
                    batch.obs, aug_rng, config.overlay_lambda_max, env_cfg.image_size))
            q, q_opt, td_loss = q_update(q, q_batch, q_opt, config.tau)
            rm_obs = q_batch.obs if config.reward_model_on_augmented else batch.obs
            model, r_opt, r_loss = reward_model.reward_train_step(
                model, rm_obs, batch.actions, batch.rewards, r_opt)
            if idm_trunk is not None:
                idm_trunk, idm_opt, idm_loss = idm_train_step(
                    idm_spec, idm_trunk, idm_opt, q, batch)

        row = _metric_row("train", step_i, episode, 0.0, ms,
                          td_loss=td_loss, reward_loss=r_loss, idm_loss=idm_loss)
        if done:
            row["return_true"] = ep_return
            episode += 1
            state, obs = envs.reset(env_cfg, SOURCE_DOMAIN,
                                    stream_seed(ms, "train-episode", episode))
            ep_return = 0.0
        else:
            state, obs = state2, obs2
        metrics.append(row)
        if (snapshot_every and on_snapshot is not None
                and (step_i + 1) % snapshot_every == 0):
            on_snapshot(step_i + 1, q, model)
    return SourceResult(q=q, model=model, metrics=metrics,
                        idm_spec=idm_spec, idm_trunk=idm_trunk)


@dataclass(frozen=True)
class FinetuneResult:
    q: QFunction
    metrics: list[dict]
    reward_reads: int
    model: RewardPredictor  # frozen model actually used
    buffer: ReplayBuffer | None = None


def finetune_target(q: QFunction, model: RewardPredictor, target: DomainSpec,
                    config: RunConfig, snapshot_every: int | None = None,
                    on_snapshot=None) -> FinetuneResult:
    """Reward-free adaptation: relabel target transitions with the frozen
    predictor and keep applying soft Q-updates from a fresh buffer.

    The environment is wrapped in a `MonitoredEnv` and only its blind step
    is called; the returned `reward_reads` must be zero. When
    `snapshot_every` is set, `on_snapshot(steps_done, q)` fires at every
    multiple of it (evaluation snapshots; they do not touch this loop's
    environment).
    """
    model = freeze(model)
    env_cfg = config.env
    ms = config.master_seed
    env = MonitoredEnv(env_cfg, target)
    buffer = ReplayBuffer(config.buffer_capacity, env_cfg.obs_dim,
                          stream_seed(ms, "ft-buffer"))
    opt = nets.init_optimizer(q.network, learning_rate=config.q_lr)
    act_rng = stream_rng(ms, "ft-act")

    metrics: list[dict] = []
    episode = 0
    state, obs = env.reset(stream_seed(ms, "ft-episode", 0))
    ep_return_pred = 0.0
    for step_i in range(config.finetune_steps):
        a = act(q, obs, config.finetune_exploration, act_rng)
        state2, obs2, done = env.step_blind(state, a)
        r_hat = predict(model, obs, a)
        buffer.add(Transition(obs, a, r_hat, obs2, done, REWARD_PREDICTED))
        ep_return_pred += r_hat

        td_loss = math.nan
        if len(buffer) >= config.batch_size:
            batch = buffer.sample(config.batch_size)
            q, opt, td_loss = q_update(q, batch, opt, config.tau)

        row = _metric_row("finetune", step_i, episode, target.intensity, ms,
                          td_loss=td_loss)
        if done:
            row["return_predicted"] = ep_return_pred
            episode += 1
            state, obs = env.reset(stream_seed(ms, "ft-episode", episode))
            ep_return_pred = 0.0
        else:
            state, obs = state2, obs2
        metrics.append(row)
        if (snapshot_every and on_snapshot is not None
                and (step_i + 1) % snapshot_every == 0):
            on_snapshot(step_i + 1, q)
    return FinetuneResult(q=q, metrics=metrics, reward_reads=env.reward_reads,
                          model=model, buffer=buffer)


def finetune_idm_baseline(q: QFunction, idm_spec: nets.NetworkSpec,
                          idm_trunk: nets.NetworkParams, target: DomainSpec,
                          config: RunConfig) -> tuple[QFunction, list[dict]]:
    """Self-supervised adaptation baseline: in the target domain, update only
    the first hidden layer of the Q-network by the IDM cross-entropy; the
    trunk, Q head, and all remaining layers stay frozen. Reward-free by
    construction (blind steps only).
    """
    if idm_trunk is None:
        raise ConfigError("IDM baseline requires a trunk trained with baseline='idm'")
    env_cfg = config.env
    ms = config.master_seed
    env = MonitoredEnv(env_cfg, target)
    buffer = ReplayBuffer(config.buffer_capacity, env_cfg.obs_dim,
                          stream_seed(ms, "idm-ft-buffer"))
    act_rng = stream_rng(ms, "idm-ft-act")
    encoder = nets.NetworkParams(weights=(q.network.weights[0],),
                                 biases=(q.network.biases[0],))
    enc_opt = nets.init_optimizer(encoder, learning_rate=config.q_lr)

    metrics: list[dict] = []
    episode = 0
    state, obs = env.reset(stream_seed(ms, "idm-ft-episode", 0))
    for step_i in range(config.finetune_steps):
        a = act(q, obs, config.finetune_exploration, act_rng)
        state2, obs2, done = env.step_blind(state, a)
        buffer.add(Transition(obs, a, 0.0, obs2, done, REWARD_PREDICTED))

        idm_loss = math.nan
        if len(buffer) >= config.batch_size:
            batch = buffer.sample(config.batch_size)
            z1, f1 = _encode(q, batch.obs)
            z2, f2 = _encode(q, batch.next_obs)
            x = np.concatenate([f1, f2], axis=1)
            logits, tape = nets.forward(idm_trunk, x, idm_spec.activation)
            idm_loss, gout = _cross_entropy(logits, batch.actions)
            _, input_grad = nets.backward(idm_trunk, tape, gout, idm_spec.activation)
            h1 = f1.shape[1]
            g_f1, g_f2 = input_grad[:, :h1], input_grad[:, h1:]
            if q.spec.activation == "relu":
                dz1 = g_f1 * (z1 > 0.0)
                dz2 = g_f2 * (z2 > 0.0)
            else:
                dz1 = g_f1 * (1.0 - f1**2)
                dz2 = g_f2 * (1.0 - f2**2)
            dw = batch.obs.T @ dz1 + batch.next_obs.T @ dz2
            db = dz1.sum(axis=0) + dz2.sum(axis=0)
            enc_grads = nets.NetworkParams(weights=(dw,), biases=(db,))
            encoder, enc_opt = nets.adam_step(encoder, enc_grads, enc_opt)
            new_net = nets.NetworkParams(
                weights=(encoder.weights[0],) + q.network.weights[1:],
                biases=(encoder.biases[0],) + q.network.biases[1:])
            q = replace(q, network=new_net)

        row = _metric_row("idm_finetune", step_i, episode, target.intensity, ms,
                          idm_loss=idm_loss)
        if done:
            episode += 1
            state, obs = env.reset(stream_seed(ms, "idm-ft-episode", episode))
        else:
            state, obs = state2, obs2
        metrics.append(row)
    return q, metrics


def evaluate(q: QFunction, domain: DomainSpec, config: RunConfig,
             phase: str, fixed_goal: tuple[float, float] | None = None,
             monitor: MonitoredEnv | None = None) -> EvalReport:
    """Greedy episodes with deterministic per-episode seeds; returns are
    undiscounted sums of true rewards (ground truth is evaluation-only).

    Episode seeds depend only on the master seed, so evaluations in
    different domains start from identical hidden states. Passing a
    `MonitoredEnv` routes the rollouts through it, which counts the
    evaluation's true-reward reads.
    """
    env_cfg = config.env
    if monitor is None:
        monitor = MonitoredEnv(env_cfg, domain)
    returns = []
    for ep in range(config.eval_episodes):
        state, obs = monitor.reset(stream_seed(config.master_seed,
                                               "eval-episode", ep))
        if fixed_goal is not None:
            state = replace(state, goal_pos=fixed_goal)
            obs = envs.render(state, domain, env_cfg)
        total = 0.0
        done = False
        while not done:
            a = act(q, obs, "greedy")
            state, obs, r, done = monitor.step(state, a)
            total += r
        returns.append(total)
    arr = np.array(returns)
    return EvalReport(mean_return=float(arr.mean()), std_return=float(arr.std()),
                      per_episode_returns=tuple(float(x) for x in returns),
                      domain_intensity=domain.intensity, phase=phase)
