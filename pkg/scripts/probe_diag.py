"""Scratch probe v4: why do some pretraining seeds stall or collapse?"""

from __future__ import annotations

import sys

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import TrainerConfig, train


def trajectory(seed: int, alpha: float, gamma: float, steps=800, anneal=300):
    cfg = TrainerConfig(
        alpha=alpha,
        gamma=gamma,
        epsilon_anneal_steps=anneal,
        total_steps=steps,
        seed=seed,
        profiles=(FidelityProfile.sim(),),
    )
    log = train(cfg)
    recs = log.agent_records(0)
    sr = [r.rolling_sr for r in recs]
    xi = [abs(r.xi) for r in recs if r.xi is not None]
    print(
        f"seed={seed} alpha={alpha} gamma={gamma}: "
        f"sr@100={sr[99]:.2f} sr@200={sr[199]:.2f} sr@400={sr[399]:.2f} "
        f"sr@799={sr[-1]:.2f} max|xi|={max(xi):.1f} mean|xi|last100={np.mean(xi[-100:]):.1f}"
    )


if __name__ == "__main__":
    for gamma in (0.5, 0.0):
        for seed in (0, 1, 2, 3, 4, 5):
            trajectory(seed, 0.01, gamma)
