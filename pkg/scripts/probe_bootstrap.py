"""Scratch probe v5: pretraining reliability matrix."""

from __future__ import annotations

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile
from csar.trainer import PretrainTargetError, TrainerConfig, pretrain_run

CASES = {
    "A a.01 o3 f.1": dict(alpha=0.01, num_objects=3, epsilon_end=0.1),
    "B a.01 o5 f.1": dict(alpha=0.01, num_objects=5, epsilon_end=0.1),
    "C a.02 o3 f.1": dict(alpha=0.02, num_objects=3, epsilon_end=0.1),
    "D a.02 o5 f.1": dict(alpha=0.02, num_objects=5, epsilon_end=0.1),
    "E a.01 o5 f.2": dict(alpha=0.01, num_objects=5, epsilon_end=0.2),
    "F a.02 o5 f.2": dict(alpha=0.02, num_objects=5, epsilon_end=0.2),
}


def pretrain_steps(seed: int, grade: float, **kw):
    cfg = TrainerConfig(
        epsilon_anneal_steps=300,
        total_steps=1200,
        seed=seed,
        profiles=(FidelityProfile.sim(),),
        **kw,
    )
    try:
        _, log = pretrain_run(cfg, grade)
        return len(log.records)
    except PretrainTargetError:
        return None


if __name__ == "__main__":
    grade = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
    for name, kw in CASES.items():
        t0 = time.time()
        outcomes = [pretrain_steps(seed, grade, **kw) for seed in range(8)]
        ok = [o for o in outcomes if o is not None]
        print(
            f"{name}: fails={8 - len(ok)} steps={outcomes} "
            f"median={np.median(ok) if ok else '-'} ({time.time()-t0:.0f}s)"
        )
