"""Lock-step multi-agent Q-learning with per-iteration parameter consensus.

Each of M agents owns one environment and one row of the parameter
stack. Iterations run in phases separated by a barrier, so results are
identical for any worker count:

1.  Every agent observes. The observation finalises the previous
    iteration's pending transition (it is that transition's next
    state); if the workspace has emptied, objects are repositioned and
    the agent re-observes. The agent then runs a forward pass on the
    acting state with its current parameters.
2.  From iteration t = 3 onward, each agent recomputes the predicted
    Q-value of its finalised transition with its current parameters,
    forms the bootstrapped target with its target parameters, and
    builds the single-cell TD gradient. The stack update is one
    consensus blend followed by a per-row gradient step
    (``csar_update``); each agent then applies one averaged replay
    minibatch step, and the target parameters refresh every
    ``target_refresh_period`` update iterations.
3.  Finalised transitions are pushed into the shared replay buffer in
    agent order.
4.  Every agent picks epsilon-greedily from its phase-1 Q-map and acts;
    the outcome opens the next pending transition.

Per-agent RNG streams (environment, action, replay) derive from the
run seed via spawned SeedSequences, and the reduction order of every
shared step is fixed, so a run is a pure function of its config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .consensus import (
    Topology,
    build_topology,
    connectivity_rank,
    consensus_step,
    laplacian,
    mixing_is_stable,
)
from .env import FidelityProfile, RewardBands, SuctionEnv
from .qnet import (
    Action,
    NetLayout,
    _backprop,
    _forward_cached,
    apply_sgd,
    backward,
    default_layout,
    forward,
    huber_grad,
    huber_loss,
    init_params,
    select_action,
    td_error,
    td_target,
)


class ConfigError(ValueError):
    """Invalid trainer configuration."""


class TrainingDivergedError(RuntimeError):
    """A non-finite TD error or loss appeared during training."""


class PretrainTargetError(RuntimeError):
    """Pretraining hit its step cap before reaching the stop rate."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters and wiring for one training run."""

    alpha: float = 1e-4
    gamma: float = 0.5
    epsilon_start: float = 0.5
    epsilon_end: float = 0.1
    epsilon_anneal_steps: int | None = None  # None -> anneal over total_steps
    total_steps: int = 270
    batch_size: int = 8
    replay_capacity: int = 500
    target_refresh_period: int = 10
    num_objects: int = 3
    empty_threshold: int = 1
    rolling_window: int = 20
    depth_input_scale: float = 15.0  # brings metre-scale depth up to O(1)
    seed: int = 0
    agent_seeds: tuple[int, ...] | None = None  # override per-agent stream roots
    num_workers: int = 1
    profiles: tuple[FidelityProfile, ...] = (FidelityProfile.sim(),)
    topology: Topology | None = None  # None -> complete graph, default weights
    bands: RewardBands = field(default_factory=RewardBands)
    grid_size: int = 16
    layout: NetLayout | None = None  # None -> default layout on grid_size
    initial_params: np.ndarray | None = None  # shared start row for every agent
    record_update_trace: bool = False
    checkpoint_period: int | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.epsilon_end > self.epsilon_start:
            raise ConfigError("epsilon_end must not exceed epsilon_start")
        if not (0.0 <= self.epsilon_end and self.epsilon_start <= 1.0):
            raise ConfigError("epsilon range must lie in [0, 1]")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.rolling_window < 1:
            raise ConfigError("rolling_window must be >= 1")
        if len(self.profiles) < 1:
            raise ConfigError("at least one agent profile required")
        if self.agent_seeds is not None and len(self.agent_seeds) != len(self.profiles):
            raise ConfigError("agent_seeds must give one seed per agent")

    @property
    def num_agents(self) -> int:
        return len(self.profiles)

    def resolved_topology(self) -> Topology:
        if self.topology is not None:
            return self.topology
        return build_topology("complete", self.num_agents)

    def resolved_layout(self) -> NetLayout:
        if self.layout is not None:
            return self.layout
        return default_layout(self.grid_size, self.grid_size)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "epsilon_start": self.epsilon_start,
            "epsilon_end": self.epsilon_end,
            "total_steps": self.total_steps,
            "batch_size": self.batch_size,
            "replay_capacity": self.replay_capacity,
            "target_refresh_period": self.target_refresh_period,
            "num_objects": self.num_objects,
            "empty_threshold": self.empty_threshold,
            "rolling_window": self.rolling_window,
            "depth_input_scale": self.depth_input_scale,
            "seed": self.seed,
            "num_workers": self.num_workers,
            "profiles": [p.to_dict() for p in self.profiles],
            "topology": self.resolved_topology().to_dict(),
            "bands": self.bands.to_dict(),
            "grid_size": self.grid_size,
            "layout": self.resolved_layout().to_dict(),
        }


def epsilon_at(step: int, cfg: TrainerConfig) -> float:
    """Linear anneal from epsilon_start at step 0 to epsilon_end at step T.

    T is ``epsilon_anneal_steps`` when set (runs longer than the anneal
    horizon hold epsilon_end), otherwise ``total_steps``.
    """
    horizon = cfg.epsilon_anneal_steps or cfg.total_steps
    frac = min(max(step, 0), horizon) / horizon
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


@dataclass(frozen=True)
class Transition:
    state: np.ndarray  # (2, H, W)
    action: Action
    reward: float
    next_state: np.ndarray
    done: bool
    seq: int = -1  # unique id assigned by the buffer (keys target caches)


class ReplayBuffer:
    """Fixed-capacity FIFO store of completed transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self._entries: list[Transition] = []
        self._next = 0
        self._counter = 0

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, transition: Transition) -> None:
        transition = replace(transition, seq=self._counter)
        self._counter += 1
        if len(self._entries) < self.capacity:
            self._entries.append(transition)
        else:
            self._entries[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        k = min(batch_size, len(self._entries))
        if k == 0:
            return []
        idx = rng.choice(len(self._entries), size=k, replace=False)
        return [self._entries[i] for i in idx]


@dataclass
class _Pending:
    """Transition opened at act time, awaiting its next-state observation."""

    state: np.ndarray
    action: Action
    reward: float
    done: bool


@dataclass
class AgentRuntime:
    """Everything one agent worker owns between barriers."""

    index: int
    params: np.ndarray
    target_params: np.ndarray
    env: SuctionEnv
    profile: FidelityProfile
    action_rng: np.random.Generator
    replay_rng: np.random.Generator
    pending: _Pending | None = None
    window: list[int] = field(default_factory=list)
    # memoised replay targets, valid for the current target parameters
    target_cache: dict[int, float] = field(default_factory=dict)

    def refresh_target(self) -> None:
        self.target_params = self.params.copy()
        self.target_cache.clear()

    def record_pick(self, success: int, window_size: int) -> float:
        self.window.append(success)
        if len(self.window) > window_size:
            del self.window[0]
        return sum(self.window) / len(self.window)


@dataclass(frozen=True)
class StepRecord:
    step: int
    agent: int
    epsilon: float
    x: int
    y: int
    z: float
    reward: float
    success: int
    mu: float
    xi: float | None
    loss: float | None
    rolling_sr: float


@dataclass
class TrainLog:
    """Per-(step, agent) records plus the final parameter stack."""

    records: list[StepRecord]
    final_stack: np.ndarray
    layout: NetLayout
    rolling_window: int
    update_trace: list[dict] | None = None

    def agent_records(self, agent: int) -> list[StepRecord]:
        return [r for r in self.records if r.agent == agent]

    def last_rolling_sr(self, agent: int) -> float:
        recs = self.agent_records(agent)
        return recs[-1].rolling_sr if recs else 0.0


def agent_rng_streams(seed: int, num_agents: int, agent_seeds=None):
    """Per-agent (environment, action, replay) generator triples.

    By default the run seed spawns one child sequence per agent;
    explicit ``agent_seeds`` replace the spawned roots (equal seeds give
    agents identical environment and exploration streams).
    """
    if agent_seeds is not None:
        children = [np.random.SeedSequence(s) for s in agent_seeds]
    else:
        children = list(np.random.SeedSequence(seed).spawn(num_agents))
    out = []
    for child in children:
        env_ss, action_ss, replay_ss = child.spawn(3)
        out.append(
            (
                np.random.default_rng(env_ss),
                np.random.default_rng(action_ss),
                np.random.default_rng(replay_ss),
            )
        )
    return out


def csar_update(
    stack: np.ndarray,
    lap: np.ndarray,
    td_grads: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Consensus blend of the stack, then one gradient row per agent.

    ``td_grads`` holds, per agent, the clipped-TD-error gradient of its
    own transition. With a single agent (L = [[0]]) this is exactly a
    vanilla gradient step.
    """
    stack = np.asarray(stack, dtype=float)
    td_grads = np.asarray(td_grads, dtype=float)
    if td_grads.shape != stack.shape:
        raise ValueError(
            f"gradient stack shape {td_grads.shape} != parameter stack {stack.shape}"
        )
    return consensus_step(stack, lap) - alpha * td_grads


def replay_update(
    agent: AgentRuntime,
    buffer: ReplayBuffer,
    cfg: TrainerConfig,
    rng: np.random.Generator,
    layout: NetLayout,
) -> np.ndarray:
    """One averaged minibatch step; no-op when the buffer is empty.

    TD errors are recomputed per sample with the agent's current and
    target parameters at call time.
    """
    batch = buffer.sample(cfg.batch_size, rng)
    if not batch:
        return agent.params
    grad = np.zeros_like(agent.params)
    for tr in batch:
        qmap, caches = _forward_cached(layout, agent.params, tr.state)
        q = qmap[tr.action.y, tr.action.x]
        y = agent.target_cache.get(tr.seq)
        if y is None:
            if tr.done:
                y = td_target(tr.reward, np.zeros((1, 1)), cfg.gamma, done=True)
            else:
                y = td_target(
                    tr.reward,
                    forward(layout, agent.target_params, tr.next_state),
                    cfg.gamma,
                    done=False,
                )
            agent.target_cache[tr.seq] = y
        upstream = huber_grad(td_error(q, y))
        if upstream != 0.0:
            grad += _backprop(layout, agent.params, caches, tr.action, upstream)
    grad /= len(batch)
    agent.params = apply_sgd(agent.params, grad, cfg.alpha)
    return agent.params


def _build_agents(cfg: TrainerConfig, layout: NetLayout) -> list[AgentRuntime]:
    streams = agent_rng_streams(cfg.seed, cfg.num_agents, cfg.agent_seeds)
    agents = []
    for idx, (profile, (env_rng, action_rng, replay_rng)) in enumerate(
        zip(cfg.profiles, streams)
    ):
        if cfg.initial_params is not None:
            params = np.array(cfg.initial_params, dtype=float)
            if params.shape != (layout.param_count,):
                raise ConfigError("initial_params does not match the network layout")
        else:
            params = init_params(layout, cfg.seed)
        env = SuctionEnv(
            profile,
            cfg.num_objects,
            env_rng,
            bands=cfg.bands,
            empty_threshold=cfg.empty_threshold,
            grid_size=cfg.grid_size,
        )
        agents.append(
            AgentRuntime(
                index=idx,
                params=params,
                target_params=params.copy(),
                env=env,
                profile=profile,
                action_rng=action_rng,
                replay_rng=replay_rng,
            )
        )
    return agents


def _write_checkpoint(path: Path, step: int, agents, layout: NetLayout) -> None:
    stack = np.stack([a.params for a in agents])
    path.mkdir(parents=True, exist_ok=True)
    binpath = path / f"step{step:06d}.stack.bin"
    binpath.write_bytes(stack.astype("<f8").tobytes())
    sidecar = {
        "step": step,
        "num_agents": len(agents),
        "layout": layout.to_dict(),
        "dtype": "<f8",
        "rng_states": [
            {
                "env": a.env.rng.bit_generator.state,
                "action": a.action_rng.bit_generator.state,
                "replay": a.replay_rng.bit_generator.state,
            }
            for a in agents
        ],
    }
    (path / f"step{step:06d}.json").write_text(json.dumps(sidecar, indent=2, default=str))


def load_checkpoint(directory, step: int):
    """Read back a checkpoint: (stack, layout, sidecar dict)."""
    directory = Path(directory)
    sidecar = json.loads((directory / f"step{step:06d}.json").read_text())
    layout = NetLayout.from_dict(sidecar["layout"])
    raw = np.frombuffer((directory / f"step{step:06d}.stack.bin").read_bytes(), dtype="<f8")
    stack = raw.reshape(sidecar["num_agents"], layout.param_count).astype(float)
    return stack, layout, sidecar


def _run(cfg: TrainerConfig, stop_rate: float | None = None) -> TrainLog:
    layout = cfg.resolved_layout()
    topo = cfg.resolved_topology()
    if topo.num_agents != cfg.num_agents:
        raise ConfigError(
            f"topology covers {topo.num_agents} agents but {cfg.num_agents} profiles given"
        )
    lap = laplacian(topo)
    if connectivity_rank(lap) != cfg.num_agents - 1:
        raise ConfigError("training requires a connected topology")
    if not mixing_is_stable(lap):
        raise ConfigError("edge weights violate the consensus stability precondition")

    agents = _build_agents(cfg, layout)
    buffer = ReplayBuffer(cfg.replay_capacity)
    records: list[StepRecord] = []
    trace: list[dict] | None = [] if cfg.record_update_trace else None
    update_count = 0
    pool = ThreadPoolExecutor(cfg.num_workers) if cfg.num_workers > 1 else None
    pmap = pool.map if pool else map

    def observe_phase(agent: AgentRuntime):
        hm = agent.env.observe()
        s_obs = hm.stacked(cfg.depth_input_scale)
        finalized = None
        if agent.pending is not None:
            p = agent.pending
            finalized = Transition(p.state, p.action, p.reward, s_obs, p.done)
            agent.pending = None
        if agent.env.ensure_ready():
            hm = agent.env.observe()
            s_act = hm.stacked(cfg.depth_input_scale)
        else:
            s_act = s_obs
        qmap = forward(layout, agent.params, s_act)
        return finalized, s_act, hm.depth, qmap

    def td_phase(item):
        agent, transition = item
        qmap, caches = _forward_cached(layout, agent.params, transition.state)
        q_pred = qmap[transition.action.y, transition.action.x]
        y = td_target(
            transition.reward,
            np.zeros((1, 1))
            if transition.done
            else forward(layout, agent.target_params, transition.next_state),
            cfg.gamma,
            transition.done,
        )
        xi = td_error(q_pred, y)
        upstream = huber_grad(xi)
        if upstream == 0.0:
            grad = np.zeros_like(agent.params)
        else:
            grad = _backprop(layout, agent.params, caches, transition.action, upstream)
        return xi, grad

    try:
        for t in range(1, cfg.total_steps + 1):
            phase1 = list(pmap(observe_phase, agents))
            finalized = [f for f, _, _, _ in phase1]

            xis: list[float | None] = [None] * cfg.num_agents
            losses: list[float | None] = [None] * cfg.num_agents
            if t > 2:
                results = list(pmap(td_phase, zip(agents, finalized)))
                gamma_rows = np.stack([g for _, g in results])
                for m, (xi, _) in enumerate(results):
                    if not np.isfinite(xi):
                        raise TrainingDivergedError(
                            f"non-finite TD error at step {t}, agent {m}"
                        )
                    xis[m] = xi
                    losses[m] = huber_loss(xi)
                stack = np.stack([a.params for a in agents])
                new_stack = csar_update(stack, lap, gamma_rows, cfg.alpha)
                if trace is not None:
                    trace.append(
                        {
                            "step": t,
                            "stack_before": stack.copy(),
                            "td_grads": gamma_rows.copy(),
                            "stack_after": new_stack.copy(),
                        }
                    )
                for agent, row in zip(agents, new_stack):
                    agent.params = row.copy()
                list(
                    pmap(
                        lambda a: replay_update(a, buffer, cfg, a.replay_rng, layout),
                        agents,
                    )
                )
                update_count += 1
                if update_count % cfg.target_refresh_period == 0:
                    for agent in agents:
                        agent.refresh_target()

            for agent, transition in zip(agents, finalized):
                if transition is not None:
                    buffer.push(transition)

            eps = epsilon_at(t - 1, cfg)

            def act_phase(item):
                agent, (_, s_act, depth, qmap) = item
                action = select_action(qmap, depth, eps, agent.action_rng)
                outcome = agent.env.pick(action)
                agent.pending = _Pending(
                    state=s_act,
                    action=action,
                    reward=outcome.reward,
                    done=outcome.repositioned,
                )
                rolling = agent.record_pick(outcome.success, cfg.rolling_window)
                return StepRecord(
                    step=t,
                    agent=agent.index,
                    epsilon=eps,
                    x=action.x,
                    y=action.y,
                    z=action.z,
                    reward=outcome.reward,
                    success=outcome.success,
                    mu=outcome.distance,
                    xi=xis[agent.index],
                    loss=losses[agent.index],
                    rolling_sr=rolling,
                )

            step_records = list(pmap(act_phase, zip(agents, phase1)))
            records.extend(step_records)

            if cfg.checkpoint_dir and cfg.checkpoint_period and t % cfg.checkpoint_period == 0:
                _write_checkpoint(Path(cfg.checkpoint_dir), t, agents, layout)

            if stop_rate is not None:
                rec = step_records[0]
                if len(agents[0].window) >= cfg.rolling_window and rec.rolling_sr >= stop_rate:
                    break
    finally:
        if pool:
            pool.shutdown()

    return TrainLog(
        records=records,
        final_stack=np.stack([a.params for a in agents]),
        layout=layout,
        rolling_window=cfg.rolling_window,
        update_trace=trace,
    )


def train(cfg: TrainerConfig) -> TrainLog:
    """Run the full lock-step loop for ``cfg.total_steps`` iterations."""
    return _run(cfg)


def pretrain_run(cfg: TrainerConfig, stop_success_rate: float) -> tuple[np.ndarray, TrainLog]:
    """Single-sim-agent training that stops at a rolling success rate.

    The stop condition needs a full rolling window, so a lucky opening
    streak cannot end pretraining early. Raises PretrainTargetError
    (with the log attached) when ``cfg.total_steps`` pass without the
    window reaching ``stop_success_rate``.
    """
    if not 0.0 < stop_success_rate <= 1.0:
        raise ConfigError("stop_success_rate must be in (0, 1]")
    if cfg.num_agents != 1 or cfg.profiles[0].kind != "sim":
        raise ConfigError("pretraining uses exactly one sim-profile agent")
    log = _run(cfg, stop_rate=stop_success_rate)
    reached = (
        len(log.records) > 0
        and log.records[-1].rolling_sr >= stop_success_rate
        and len(log.agent_records(0)) >= cfg.rolling_window
    )
    if not reached:
        raise PretrainTargetError(
            f"rolling success rate never reached {stop_success_rate} "
            f"within {cfg.total_steps} steps",
            log=log,
        )
    return log.final_stack[0].copy(), log


def pretrain(cfg: TrainerConfig, stop_success_rate: float) -> np.ndarray:
    """Parameters of a sim agent at the moment it first hits the stop rate."""
    params, _ = pretrain_run(cfg, stop_success_rate)
    return params
