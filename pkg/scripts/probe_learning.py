"""Scratch probe: how fast does a single sim agent learn at various alphas?"""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import TrainerConfig, train


def probe(alpha: float, steps: int = 400, seed: int = 0, gamma: float = 0.5):
    cfg = TrainerConfig(
        alpha=alpha,
        gamma=gamma,
        total_steps=steps,
        seed=seed,
        profiles=(FidelityProfile.sim(),),
    )
    t0 = time.time()
    log = train(cfg)
    wall = time.time() - t0
    sr = [r.rolling_sr for r in log.records]
    marks = {k: sr[min(k, len(sr) - 1)] for k in (50, 100, 200, 399)}
    return wall, marks


if __name__ == "__main__":
    for alpha in (1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.3):
        wall, marks = probe(alpha)
        print(f"alpha={alpha:<8} wall={wall:5.1f}s rolling_sr@steps={marks}")
