"""Fine-tune diagnostics at one intensity: PRFT vs a true-reward ceiling.

Variants:
  prft  -- standard predicted-reward fine-tuning
  true  -- same loop but rewards come from the env (diagnostic ceiling only)
"""

import sys
import time
from dataclasses import replace

import numpy as np

from prft import envs, nets, pipeline, reward_model
from prft.envs import EnvConfig
from prft.maxent import REWARD_TRUE, ReplayBuffer, Transition, act, q_update
from prft.pipeline import RunConfig, SOURCE_DOMAIN
from prft.seeding import stream_rng, stream_seed


def finetune_true_reward(q, target, config):
    """Mirror of finetune_target but reading true rewards (diagnostic only)."""
    env_cfg = config.env
    ms = config.master_seed
    buffer = ReplayBuffer(config.buffer_capacity, env_cfg.obs_dim,
                          stream_seed(ms, "finetune-buffer"))
    opt = nets.init_optimizer(q.network, learning_rate=config.q_lr)
    act_rng = stream_rng(ms, "finetune-act")
    episode = 0
    state, obs = envs.reset(env_cfg, target, stream_seed(ms, "finetune-episode", 0))
    for step_i in range(config.finetune_steps):
        a = act(q, obs, config.finetune_exploration, act_rng)
        state2, obs2, r, done = envs.step(state, a, env_cfg, target)
        buffer.add(Transition(obs, a, r, obs2, done, REWARD_TRUE))
        if len(buffer) >= config.batch_size:
            q, opt, _ = q_update(q, buffer.sample(config.batch_size), opt, config.tau)
        if done:
            episode += 1
            state, obs = envs.reset(env_cfg, target,
                                    stream_seed(ms, "finetune-episode", episode))
        else:
            state, obs = state2, obs2
    return q


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    kappa = float(sys.argv[2]) if len(sys.argv) > 2 else 0.4
    aug = sys.argv[3] if len(sys.argv) > 3 else "none"
    ft_steps = int(sys.argv[4]) if len(sys.argv) > 4 else 20000
    train_steps = int(sys.argv[5]) if len(sys.argv) > 5 else 30000
    image = int(sys.argv[6]) if len(sys.argv) > 6 else 8
    config = RunConfig(master_seed=seed, train_steps=train_steps, finetune_steps=ft_steps,
                       hidden_sizes=(64, 64), eval_episodes=20, gamma=0.9,
                       augmentation=aug, reward_model_on_augmented=(aug != "none"),
                       target_intensity=kappa,
                       env=EnvConfig(image_size=(image, image)))
    src = pipeline.train_source(config)
    base = pipeline.evaluate(src.q, SOURCE_DOMAIN, config, "source")
    target = config.target_domain()
    zs = pipeline.evaluate(src.q, target, config, "zero_shot")
    print(f"[seed {seed} k={kappa}] source {base.mean_return:.2f} "
          f"zero-shot {zs.mean_return:.2f} offsets {target.camera_offset}", flush=True)

    t0 = time.time()
    ft = pipeline.finetune_target(src.q, src.model, target, config)
    prft_ret = pipeline.evaluate(ft.q, target, config, "finetuned").mean_return
    print(f"  prft: {prft_ret:.2f} ({(prft_ret-zs.mean_return)/zs.mean_return:+.1%}) "
          f"{time.time()-t0:.0f}s", flush=True)

    t0 = time.time()
    q_true = finetune_true_reward(src.q, target, config)
    true_ret = pipeline.evaluate(q_true, target, config, "finetuned").mean_return
    print(f"  true: {true_ret:.2f} ({(true_ret-zs.mean_return)/zs.mean_return:+.1%}) "
          f"{time.time()-t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
