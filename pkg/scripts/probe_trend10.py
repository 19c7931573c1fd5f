"""Scratch probe v7: 10-seed sign-test readout for the trend recipe."""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import PretrainTargetError, TrainerConfig, pretrain_run, train

ALPHA = 0.02
OBJECTS = 5
SIGMA = 0.01
DISTORT = float(sys.argv[1]) if len(sys.argv) > 1 else 0.05
STEPS = 600


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


def strategy_run(params, num_sim, seed):
    real = FidelityProfile.pseudo_real(depth_noise_sigma=SIGMA, distortion_strength=DISTORT, pick_failure_prob=0.10)
    profiles = (real,) + (FidelityProfile.sim(),) * num_sim
    topo = None
    cfg = TrainerConfig(
        alpha=ALPHA,
        num_objects=OBJECTS,
        epsilon_start=0.05,
        epsilon_end=0.05,
        total_steps=STEPS,
        seed=seed + 1000,
        profiles=profiles,
        topology=topo,
        initial_params=params,
    )
    log = train(cfg)
    recs = log.agent_records(0)
    early = float(np.mean([r.success for r in recs[:40]]))
    return steps_to(log, 0, 0.8, cfg.rolling_window), early


def sign_test(wins, losses):
    from math import comb

    n = wins + losses
    if n == 0:
        return 1.0
    return sum(comb(n, k) for k in range(wins, n + 1)) / 2**n


if __name__ == "__main__":
    rows = []
    for seed in range(10):
        t0 = time.time()
        try:
            params, plog = pretrain_to(0.5, seed)
        except PretrainTargetError:
            print(f"seed {seed}: pretrain failed")
            continue
        row = {"pre": len(plog.records)}
        for name, nsim in (("s2r", 0), ("sar1", 1), ("sar2", 2), ("sar3", 3)):
            row[name], row[name + "_e"] = strategy_run(params, nsim, seed)
        rows.append(row)
        print(
            f"seed {seed}: pre={row['pre']:4d} "
            f"s2r={row['s2r']}({row['s2r_e']:.2f}) sar1={row['sar1']}({row['sar1_e']:.2f}) "
            f"sar2={row['sar2']}({row['sar2_e']:.2f}) sar3={row['sar3']}({row['sar3_e']:.2f}) "
            f"({time.time() - t0:.0f}s)"
        )

    inf = 10**9

    def v(row, k):
        return row[k] if row[k] is not None else inf

    wins = sum(1 for r in rows if v(r, "sar3") < v(r, "s2r"))
    losses = sum(1 for r in rows if v(r, "sar3") > v(r, "s2r"))
    print(f"sar3 vs s2r: wins={wins} losses={losses} ties={len(rows)-wins-losses}")
    print(f"one-sided sign test p={sign_test(wins, losses):.4f}")
    for k in ("s2r", "sar1", "sar2", "sar3"):
        vals = [v(r, k) for r in rows]
        print(f"{k}: median={np.median(vals)} values={[r[k] for r in rows]}")
