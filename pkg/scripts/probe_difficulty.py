"""Scratch probe v9: task difficulty vs object count and gap strength."""

from __future__ import annotations

import sys

import numpy as np

sys.path.insert(0, "src")

from csar.env import FidelityProfile, SuctionEnv
from csar.qnet import default_layout, forward, init_params
from csar.trainer import agent_rng_streams


def greedy_hit_rate(params, profile, num_objects, seeds=range(20), picks=25):
    layout = default_layout()
    hits = total = 0
    for seed in seeds:
        (env_rng, _, _), = agent_rng_streams(seed, 1)
        env = SuctionEnv(profile, num_objects, env_rng)
        for _ in range(picks):
            env.ensure_ready()
            hm = env.observe()
            q = forward(layout, params, hm.stacked(15.0))
            y, x = divmod(int(np.argmax(q)), 16)
            on_footprint = any((y, x) in o.footprint for o in env.ws.objects)
            hits += int(on_footprint)
            total += 1
            out = env.pick(type("A", (), {"x": x, "y": y, "z": 0.0})())
    return hits / total


if __name__ == "__main__":
    real = lambda d: FidelityProfile.pseudo_real(depth_noise_sigma=0.02, distortion_strength=d)
    for num_objects in (2, 3, 5):
        for init_seed in (0, 1, 2):
            params = init_params(default_layout(), init_seed)
            r_sim = greedy_hit_rate(params, FidelityProfile.sim(), num_objects)
            r_real_25 = greedy_hit_rate(params, real(0.25), num_objects)
            print(
                f"objects={num_objects} init_seed={init_seed}: "
                f"random-net greedy hit sim={r_sim:.2f} real(d=.25)={r_real_25:.2f}"
            )
