"""Scratch probe: strategy separation for the trend suites."""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import PretrainTargetError, TrainerConfig, pretrain_run, train


ALPHA = 0.01


def pretrain_to(grade: float, seed: int, cap: int = 800):
    cfg = TrainerConfig(
        alpha=ALPHA, total_steps=cap, seed=seed, profiles=(FidelityProfile.sim(),)
    )
    params, log = pretrain_run(cfg, grade)
    return params, len(log.records)


def steps_to(log, agent: int, threshold: float, window: int):
    recs = log.agent_records(agent)
    for i, r in enumerate(recs):
        if i + 1 >= window and r.rolling_sr >= threshold:
            return r.step
    return None


def strategy_run(params, num_sim: int, seed: int, steps: int = 500):
    profiles = (FidelityProfile.pseudo_real(),) + (FidelityProfile.sim(),) * num_sim
    cfg = TrainerConfig(
        alpha=ALPHA,
        total_steps=steps,
        seed=seed + 1000,
        profiles=profiles,
        initial_params=params,
    )
    log = train(cfg)
    return steps_to(log, 0, 0.8, cfg.rolling_window)


if __name__ == "__main__":
    results = {"s2r": [], "sar1": [], "sar2": [], "sar3": []}
    pre_steps_all = []
    for seed in range(6):
        t0 = time.time()
        try:
            params, pre_steps = pretrain_to(0.5, seed)
        except PretrainTargetError:
            print(f"seed {seed}: pretrain failed")
            continue
        pre_steps_all.append(pre_steps)
        s2r = strategy_run(params, 0, seed)
        sar1 = strategy_run(params, 1, seed)
        sar2 = strategy_run(params, 2, seed)
        sar3 = strategy_run(params, 3, seed)
        results["s2r"].append(s2r)
        results["sar1"].append(sar1)
        results["sar2"].append(sar2)
        results["sar3"].append(sar3)
        print(
            f"seed {seed}: pretrain={pre_steps:3d} s2r={s2r} "
            f"sar1={sar1} sar2={sar2} sar3={sar3} ({time.time()-t0:.0f}s)"
        )

    def med(xs):
        vals = [x if x is not None else 10_000 for x in xs]
        return float(np.median(vals))

    print("pretrain steps:", pre_steps_all)
    for k, v in results.items():
        print(f"{k}: median={med(v)} values={v}")
