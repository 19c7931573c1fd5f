"""Scratch probe v11: speckle-dominant gap, s2r vs sar3 only."""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import PretrainTargetError, TrainerConfig, pretrain_run, train

ALPHA = 0.02
OBJECTS = 5
SIGMA = float(sys.argv[1]) if len(sys.argv) > 1 else 0.03
SEEDS = int(sys.argv[2]) if len(sys.argv) > 2 else 8


def pretrain_to(grade, seed):
    cfg = TrainerConfig(
        alpha=ALPHA,
        num_objects=OBJECTS,
        epsilon_end=0.05,
        epsilon_anneal_steps=150,
        total_steps=2000,
        seed=seed,
        profiles=(FidelityProfile.sim(),),
    )
    return pretrain_run(cfg, grade)


def steps_to(log, agent, threshold, window):
    for i, r in enumerate(log.agent_records(agent)):
        if i + 1 >= window and r.rolling_sr >= threshold:
            return r.step
    return None


def strategy_run(params, num_sim, seed, steps=600):
    real = FidelityProfile.pseudo_real(depth_noise_sigma=SIGMA, distortion_strength=0.05)
    profiles = (real,) + (FidelityProfile.sim(),) * num_sim
    cfg = TrainerConfig(
        alpha=ALPHA,
        num_objects=OBJECTS,
        epsilon_start=0.05,
        epsilon_end=0.05,
        total_steps=steps,
        seed=seed + 1000,
        profiles=profiles,
        initial_params=params,
    )
    log = train(cfg)
    recs = log.agent_records(0)
    early = float(np.mean([r.success for r in recs[:40]]))
    return steps_to(log, 0, 0.8, cfg.rolling_window), early


if __name__ == "__main__":
    rows = []
    for seed in range(SEEDS):
        t0 = time.time()
        try:
            params, plog = pretrain_to(0.5, seed)
        except PretrainTargetError:
            print(f"seed {seed}: pretrain failed")
            continue
        s2r, e0 = strategy_run(params, 0, seed)
        sar3, e3 = strategy_run(params, 3, seed)
        rows.append((s2r, sar3))
        print(
            f"seed {seed}: pre={len(plog.records):4d} s2r={s2r}({e0:.2f}) "
            f"sar3={sar3}({e3:.2f}) ({time.time()-t0:.0f}s)"
        )
    inf = 10**9
    wins = sum(1 for a, b in rows if (b or inf) < (a or inf))
    losses = sum(1 for a, b in rows if (b or inf) > (a or inf))
    print(f"sar3 wins={wins} losses={losses} ties={len(rows)-wins-losses}")
