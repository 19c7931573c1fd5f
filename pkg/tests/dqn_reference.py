"""Shared oracle: a literal single-agent DQN loop, independent of train().

Used by the degeneration checks: with one agent the consensus matrix is
[[0]], so the full multi-agent trainer must reproduce this loop bitwise.
"""

from __future__ import annotations

import numpy as np

from csar.env import SuctionEnv
from csar.qnet import backward, forward, init_params, select_action, td_error, td_target
from csar.trainer import ReplayBuffer, TrainerConfig, Transition, agent_rng_streams, epsilon_at


def reference_vanilla_dqn(cfg: TrainerConfig):
    """Run the plain DQN loop and return per-step parameter snapshots."""
    layout = cfg.resolved_layout()
    (env_rng, action_rng, replay_rng), = agent_rng_streams(cfg.seed, 1, cfg.agent_seeds)
    env = SuctionEnv(
        cfg.profiles[0], cfg.num_objects, env_rng,
        bands=cfg.bands, empty_threshold=cfg.empty_threshold, grid_size=cfg.grid_size,
    )
    params = (
        np.array(cfg.initial_params, dtype=float)
        if cfg.initial_params is not None
        else init_params(layout, cfg.seed)
    )
    target = params.copy()
    buffer = ReplayBuffer(cfg.replay_capacity)
    pending = None
    update_count = 0
    param_history = []

    for t in range(1, cfg.total_steps + 1):
        hm = env.observe()
        s_obs = hm.stacked(cfg.depth_input_scale)
        finalized = None
        if pending is not None:
            finalized = Transition(pending[0], pending[1], pending[2], s_obs, pending[3])
            pending = None
        if env.ensure_ready():
            hm = env.observe()
            s_act = hm.stacked(cfg.depth_input_scale)
        else:
            s_act = s_obs
        qmap = forward(layout, params, s_act)

        if t > 2:
            q_pred = forward(layout, params, finalized.state)[
                finalized.action.y, finalized.action.x
            ]
            if finalized.done:
                y = finalized.reward
            else:
                y = td_target(
                    finalized.reward, forward(layout, target, finalized.next_state),
                    cfg.gamma, done=False,
                )
            xi = td_error(q_pred, y)
            grad = backward(layout, params, finalized.state, finalized.action, xi)
            params = params - cfg.alpha * grad

            batch = buffer.sample(cfg.batch_size, replay_rng)
            if batch:
                avg = np.zeros_like(params)
                for tr in batch:
                    q = forward(layout, params, tr.state)[tr.action.y, tr.action.x]
                    if tr.done:
                        yb = tr.reward
                    else:
                        yb = td_target(
                            tr.reward, forward(layout, target, tr.next_state),
                            cfg.gamma, done=False,
                        )
                    avg += backward(layout, params, tr.state, tr.action, td_error(q, yb))
                params = params - cfg.alpha * (avg / len(batch))

            update_count += 1
            if update_count % cfg.target_refresh_period == 0:
                target = params.copy()

        if finalized is not None:
            buffer.push(finalized)

        action = select_action(qmap, hm.depth, epsilon_at(t - 1, cfg), action_rng)
        out = env.pick(action)
        pending = (s_act, action, out.reward, out.repositioned)
        param_history.append(params.copy())

    return param_history
