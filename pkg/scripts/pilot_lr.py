"""Fine-tune learning-rate and training-length sensitivity probe.

Usage: pilot_lr.py seed train_steps kappas_csv lrs_csv
"""

import sys
import time
from dataclasses import replace

from prft import pipeline
from prft.envs import EnvConfig
from prft.pipeline import RunConfig, SOURCE_DOMAIN


def main():
    seed = int(sys.argv[1])
    train_steps = int(sys.argv[2])
    kappas = [float(k) for k in sys.argv[3].split(",")]
    lrs = [float(x) for x in sys.argv[4].split(",")]
    aug = sys.argv[5] if len(sys.argv) > 5 else "none"
    alpha = float(sys.argv[6]) if len(sys.argv) > 6 else 0.05
    config = RunConfig(master_seed=seed, train_steps=train_steps,
                       finetune_steps=20000, hidden_sizes=(64, 64),
                       eval_episodes=20, gamma=0.9, alpha=alpha,
                       augmentation=aug,
                       reward_model_on_augmented=(aug != "none"),
                       env=EnvConfig(image_size=(8, 8)))
    t0 = time.time()
    src = pipeline.train_source(config)
    base = pipeline.evaluate(src.q, SOURCE_DOMAIN, config, "source")
    print(f"[seed {seed}] {train_steps} steps in {time.time()-t0:.0f}s "
          f"source {base.mean_return:.2f}", flush=True)
    for kappa in kappas:
        cfg = replace(config, target_intensity=kappa)
        target = cfg.target_domain() if kappa > 0 else SOURCE_DOMAIN
        zs = pipeline.evaluate(src.q, target, cfg, "zero_shot").mean_return
        for lr in lrs:
            cfg_lr = replace(cfg, q_lr=lr)
            ft = pipeline.finetune_target(src.q, src.model, target, cfg_lr)
            ret = pipeline.evaluate(ft.q, target, cfg_lr, "finetuned").mean_return
            print(f"  k={kappa} lr={lr:g}: zs {zs:.2f} ft {ret:.2f} "
                  f"({(ret-zs)/zs:+.1%})", flush=True)


if __name__ == "__main__":
    main()
