"""Which distraction stage hurts the reward model vs the policy?

Trains one source run, then evaluates the reward-model linear fit and the
zero-shot greedy return under each render stage in isolation and jointly.
"""

import sys
from dataclasses import replace

import numpy as np

from prft import envs, pipeline
from prft.cli import collect_rollout_states, reward_fit_for_domain
from prft.envs import DomainSpec, EnvConfig
from prft.pipeline import RunConfig, SOURCE_DOMAIN
from prft.seeding import stream_rng, stream_seed


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    kappa = float(sys.argv[2]) if len(sys.argv) > 2 else 0.4
    aug = sys.argv[3] if len(sys.argv) > 3 else "none"
    config = RunConfig(master_seed=seed, train_steps=30000, finetune_steps=0,
                       hidden_sizes=(64, 64), eval_episodes=20, gamma=0.9,
                       augmentation=aug, reward_model_on_augmented=(aug != "none"),
                       env=EnvConfig(image_size=(8, 8)))
    src = pipeline.train_source(config)
    base = pipeline.evaluate(src.q, SOURCE_DOMAIN, config, "source")
    print(f"source return {base.mean_return:.2f}", flush=True)

    full = envs.make_domain(kappa, stream_seed(seed, "target-domain"))
    identity = tuple(tuple(float(x == y) for x in range(3)) for y in range(3))
    variants = {
        "full": full,
        "bg-only": replace(full, color_mix=identity, camera_offset=(0, 0),
                           distractor_count=0),
        "distract-only": replace(full, color_mix=identity, camera_offset=(0, 0)),
        "colormix-only": replace(full, camera_offset=(0, 0), distractor_count=0),
        "offset-only": replace(full, color_mix=identity, distractor_count=0),
        "no-offset": replace(full, camera_offset=(0, 0)),
        "no-colormix": replace(full, color_mix=identity),
    }
    rng = stream_rng(seed, "diagnose-act")
    states, actions = collect_rollout_states(src.q, config, 10, rng)
    print(f"domain offsets {full.camera_offset} "
          f"mix rows {np.round(np.asarray(full.color_mix), 2).tolist()}")
    for name, dom in variants.items():
        fit = reward_fit_for_domain(src.model, states, actions, dom, config.env)
        zs = pipeline.evaluate(src.q, dom, config, "zero_shot")
        print(f"  {name:14s} slope {fit.slope:+.3f} r2 {fit.r_squared:.3f} "
              f"mse {fit.mse:.4f} | zero-shot {zs.mean_return:.2f}", flush=True)


if __name__ == "__main__":
    main()
