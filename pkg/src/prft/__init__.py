"""Desk-scale lab for predicted-reward policy fine-tuning under visual
domain shift: point-mass pixel environments, a minimal dense-network
autodiff core, discrete-action maximum-entropy RL, reward prediction with
degradation diagnostics, tabular oracles, and a reproducible experiment
harness.
"""

__version__ = "0.1.0"
