"""Run the full desk-scale transfer experiment as a sweep.

Writes a sweep spec at the calibrated analog scale (8x8 renders, gamma 0.9,
100k source steps, 20k reward-free fine-tune steps) and drives the CLI:
source training per seed, then zero-shot / PRFT / IDM / control cells over
the requested intensities.

Usage: run_analog_sweep.py [out_dir] [workers]
"""

import sys
import tempfile
from pathlib import Path

from prft import cli

SPEC = """\
[run]
train_steps = 100000
finetune_steps = 20000
eval_episodes = 20
hidden_sizes = 64,64
gamma = 0.9

[env]
image_size = 8,8

[sweep]
intensities = 0.1,0.2,0.3,0.4,0.5
seeds = 0,1,2,3
phases = zero_shot,prft,idm,control
"""


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/analog-sweep"
    workers = sys.argv[2] if len(sys.argv) > 2 else "1"
    Path(out).mkdir(parents=True, exist_ok=True)
    spec_path = Path(out) / "sweep-spec.ini"
    spec_path.write_text(SPEC, encoding="utf-8")
    code = cli.main(["sweep", "--config", str(spec_path), "--out", out,
                     "--workers", workers])
    raise SystemExit(code)


if __name__ == "__main__":
    main()
