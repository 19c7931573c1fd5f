"""Scratch probe v3: depth-noise domain gap and recovery speed."""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import PretrainTargetError, TrainerConfig, pretrain_run, train

ALPHA = 0.01


def pretrain_to(grade: float, seed: int, cap: int = 1000, anneal: int = 300):
    cfg = TrainerConfig(
        alpha=ALPHA,
        epsilon_anneal_steps=anneal,
        total_steps=cap,
        seed=seed,
        profiles=(FidelityProfile.sim(),),
    )
    params, log = pretrain_run(cfg, grade)
    return params, len(log.records)


def steps_to(log, agent, threshold, window):
    for i, r in enumerate(log.agent_records(agent)):
        if i + 1 >= window and r.rolling_sr >= threshold:
            return r.step
    return None


def strategy_run(params, num_sim: int, seed: int, sigma: float, steps: int = 600):
    real = FidelityProfile.pseudo_real(depth_noise_sigma=sigma)
    profiles = (real,) + (FidelityProfile.sim(),) * num_sim
    cfg = TrainerConfig(
        alpha=ALPHA,
        epsilon_start=0.1,
        epsilon_end=0.1,
        total_steps=steps,
        seed=seed + 1000,
        profiles=profiles,
        initial_params=params,
    )
    log = train(cfg)
    recs = log.agent_records(0)
    early = np.mean([r.success for r in recs[:40]])
    return steps_to(log, 0, 0.8, cfg.rolling_window), float(early)


if __name__ == "__main__":
    sigmas = [float(s) for s in (sys.argv[1:] or ["0.01", "0.02", "0.03"])]
    for sigma in sigmas:
        print(f"--- depth_noise_sigma={sigma}")
        for seed in range(4):
            t0 = time.time()
            try:
                params, pre = pretrain_to(0.5, seed)
            except PretrainTargetError:
                print(f"  seed {seed}: pretrain failed")
                continue
            s2r, e0 = strategy_run(params, 0, seed, sigma)
            sar3, e3 = strategy_run(params, 3, seed, sigma)
            print(
                f"  seed {seed}: pre={pre:4d} s2r={s2r} (early sr {e0:.2f}) "
                f"sar3={sar3} (early sr {e3:.2f}) ({time.time()-t0:.0f}s)"
            )
