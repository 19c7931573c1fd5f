"""Scratch probe v6: full strategy separation under the tuned regime."""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import PretrainTargetError, TrainerConfig, pretrain_run, train

ALPHA = 0.02
OBJECTS = 5


def pretrain_to(grade: float, seed: int):
    cfg = TrainerConfig(
        alpha=ALPHA,
        num_objects=OBJECTS,
        epsilon_end=0.2,
        epsilon_anneal_steps=300,
        total_steps=1200,
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


def strategy_run(params, num_sim: int, seed: int, sigma: float, steps: int = 500):
    real = FidelityProfile.pseudo_real(depth_noise_sigma=sigma)
    profiles = (real,) + (FidelityProfile.sim(),) * num_sim
    cfg = TrainerConfig(
        alpha=ALPHA,
        num_objects=OBJECTS,
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
    sigma = float(sys.argv[1]) if len(sys.argv) > 1 else 0.02
    results = {"s2r": [], "sar1": [], "sar3": []}
    for seed in range(6):
        t0 = time.time()
        try:
            params, pre = pretrain_to(0.5, seed)
        except PretrainTargetError:
            print(f"seed {seed}: pretrain failed")
            continue
        s2r, e0 = strategy_run(params, 0, seed, sigma)
        sar1, e1 = strategy_run(params, 1, seed, sigma)
        sar3, e3 = strategy_run(params, 3, seed, sigma)
        results["s2r"].append(s2r)
        results["sar1"].append(sar1)
        results["sar3"].append(sar3)
        print(
            f"seed {seed}: pre={pre:4d} s2r={s2r}({e0:.2f}) sar1={sar1}({e1:.2f}) "
            f"sar3={sar3}({e3:.2f}) ({time.time()-t0:.0f}s)"
        )

    def med(xs):
        return float(np.median([x if x is not None else 10_000 for x in xs]))

    for k, v in results.items():
        print(f"{k}: median={med(v)} values={v}")
