"""Scratch probe v2: constant low epsilon so grades reflect greedy quality."""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import PretrainTargetError, TrainerConfig, pretrain_run, train

ALPHA = 0.01
PRE_EPS = 0.15
RUN_EPS = 0.1


def pretrain_to(grade: float, seed: int, cap: int = 900):
    cfg = TrainerConfig(
        alpha=ALPHA,
        epsilon_start=PRE_EPS,
        epsilon_end=PRE_EPS,
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


def strategy_run(params, num_sim: int, seed: int, steps: int = 600):
    profiles = (FidelityProfile.pseudo_real(),) + (FidelityProfile.sim(),) * num_sim
    cfg = TrainerConfig(
        alpha=ALPHA,
        epsilon_start=RUN_EPS,
        epsilon_end=RUN_EPS,
        total_steps=steps,
        seed=seed + 1000,
        profiles=profiles,
        initial_params=params,
    )
    log = train(cfg)
    return steps_to(log, 0, 0.8, cfg.rolling_window)


if __name__ == "__main__":
    grades_probe = sys.argv[1:] == ["grades"]
    if grades_probe:
        for seed in range(4):
            row = {}
            for grade in (0.3, 0.5, 0.7, 0.9):
                try:
                    _, n = pretrain_to(grade, seed)
                    row[grade] = n
                except PretrainTargetError:
                    row[grade] = None
            print(f"seed {seed}: pretrain steps per grade {row}")
        sys.exit(0)

    results = {"s2r": [], "sar1": [], "sar2": [], "sar3": []}
    for seed in range(6):
        t0 = time.time()
        try:
            params, pre_steps = pretrain_to(0.5, seed)
        except PretrainTargetError:
            print(f"seed {seed}: pretrain failed")
            continue
        vals = {
            "s2r": strategy_run(params, 0, seed),
            "sar1": strategy_run(params, 1, seed),
            "sar2": strategy_run(params, 2, seed),
            "sar3": strategy_run(params, 3, seed),
        }
        for k, v in vals.items():
            results[k].append(v)
        print(f"seed {seed}: pretrain={pre_steps:3d} {vals} ({time.time()-t0:.0f}s)")

    def med(xs):
        return float(np.median([x if x is not None else 10_000 for x in xs]))

    for k, v in results.items():
        print(f"{k}: median={med(v)} values={v}")
