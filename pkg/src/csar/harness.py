"""Scenario definitions, seeded batteries, metrics, and result emission.

A scenario names a training strategy, its pretraining grade, and
overrides for the trainer and the pseudo-real domain gap. Running one
seed means: pretrain a single sim agent until its rolling success rate
first reaches the grade, then co-train (``sim_and_real``: the
pseudo-real agent plus N sim agents under consensus coupling) or
continue solo (``sim_to_real``: the pseudo-real agent alone), both
starting from the pretrained parameters.

Each run emits one per-step CSV (fixed header, byte-reproducible), a
manifest JSON capturing every resolved config value, and a per-seed
summary. A battery runs a list of scenarios over shared seeds with a
pretrain cache so paired strategies start from identical parameters,
and writes a cross-seed median/IQR summary.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .consensus import Topology, build_topology
from .env import FidelityProfile, RewardBands
from .qnet import load_params, save_params
from .trainer import (
    PretrainTargetError,
    TrainLog,
    TrainerConfig,
    pretrain_run,
    train,
)

CSV_HEADER = "scenario,seed,agent,step,epsilon,reward,success,mu,loss,rolling_sr"
PSEUDO_REAL_AGENT = 0  # index convention:agent 0 carries the domain gap
STRATEGY_SEED_OFFSET = 1000  # keeps co-training streams apart from pretraining

# Desk-scale preset: the physical-scale defaults in TrainerConfig do not
# move a ~750-weight network anywhere in a few hundred steps, so scenario
# runs use a larger step size, more objects, and a near-greedy floor.
# Pretraining anneals exploration to a small floor so the stop grade
# reflects greedy policy quality rather than exploration luck; the wide
# rolling window keeps threshold crossings from being luck-dominated.
# All values land in every run manifest.
DESK_PRETRAIN = dict(
    alpha=0.02,
    num_objects=5,
    epsilon_start=0.5,
    epsilon_end=0.05,
    epsilon_anneal_steps=150,
    total_steps=2000,
    rolling_window=40,
)
DESK_TRAINER = dict(
    alpha=0.02,
    num_objects=5,
    epsilon_start=0.05,
    epsilon_end=0.05,
    total_steps=700,
    rolling_window=40,
)
DESK_DOMAIN_GAP = dict(
    depth_noise_sigma=0.05,
    distortion_strength=0.05,
    pick_failure_prob=0.05,
)
DESK_EDGE_WEIGHT = 0.1  # gentle mixing: each agent keeps most of its own row

STRATEGIES = ("sim_and_real", "sim_to_real")


class ScenarioError(ValueError):
    """Invalid scenario definition."""


@dataclass(frozen=True)
class Scenario:
    """One named experiment arm with its seeds and overrides."""

    name: str
    strategy: str
    num_sim_agents: int
    pretrain_grade: float
    seeds: tuple[int, ...]
    topology: dict = field(default_factory=lambda: {"kind": "complete"})
    pretrain_overrides: dict = field(default_factory=dict)
    trainer_overrides: dict = field(default_factory=dict)
    domain_gap: dict = field(default_factory=dict)
    threshold_pct: float = 80.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "sim_and_real" and self.num_sim_agents < 1:
            raise ScenarioError("sim_and_real needs at least one sim agent")
        if self.strategy == "sim_to_real" and self.num_sim_agents != 0:
            raise ScenarioError("sim_to_real trains the pseudo-real agent alone")
        if not 0.0 < self.pretrain_grade <= 1.0:
            raise ScenarioError("pretrain_grade must be in (0, 1]")
        if not self.seeds:
            raise ScenarioError("scenario needs at least one seed")

    @property
    def num_agents(self) -> int:
        return 1 + self.num_sim_agents

    def pretrain_config(self, seed: int) -> TrainerConfig:
        kw = {**DESK_PRETRAIN, **self.pretrain_overrides}
        return TrainerConfig(seed=seed, profiles=(FidelityProfile.sim(),), **kw)

    def pseudo_real_profile(self) -> FidelityProfile:
        return FidelityProfile.pseudo_real(**{**DESK_DOMAIN_GAP, **self.domain_gap})

    def build_topology(self) -> Topology:
        spec = dict(self.topology)
        kind = spec.get("kind", "complete")
        return build_topology(
            kind,
            self.num_agents,
            edge_weight=spec.get("edge_weight", DESK_EDGE_WEIGHT),
            custom_edges=spec.get("edges"),
        )

    def strategy_config(self, seed: int, initial_params: np.ndarray) -> TrainerConfig:
        profiles = (self.pseudo_real_profile(),) + (FidelityProfile.sim(),) * self.num_sim_agents
        kw = {**DESK_TRAINER, **self.trainer_overrides}
        return TrainerConfig(
            seed=seed + STRATEGY_SEED_OFFSET,
            profiles=profiles,
            topology=self.build_topology(),
            initial_params=initial_params,
            **kw,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "strategy": self.strategy,
            "num_sim_agents": self.num_sim_agents,
            "pretrain_grade": self.pretrain_grade,
            "seeds": list(self.seeds),
            "topology": dict(self.topology),
            "pretrain_overrides": dict(self.pretrain_overrides),
            "trainer_overrides": dict(self.trainer_overrides),
            "domain_gap": dict(self.domain_gap),
            "threshold_pct": self.threshold_pct,
        }


def scenario_from_dict(d: dict) -> Scenario:
    try:
        return Scenario(
            name=d["name"],
            strategy=d["strategy"],
            num_sim_agents=int(d.get("num_sim_agents", 0)),
            pretrain_grade=float(d.get("pretrain_grade", 0.5)),
            seeds=tuple(int(s) for s in d.get("seeds", range(10))),
            topology=dict(d.get("topology", {"kind": "complete"})),
            pretrain_overrides=dict(d.get("pretrain", {})),
            trainer_overrides=dict(d.get("trainer", {})),
            domain_gap=dict(d.get("domain_gap", {})),
            threshold_pct=float(d.get("threshold_pct", 80.0)),
        )
    except KeyError as missing:
        raise ScenarioError(f"scenario config missing required key {missing}") from None


def success_rate(successes: int, iterations: int) -> float:
    """Percentage of successful picks over ``iterations`` attempts."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if successes > iterations:
        raise ValueError("successes cannot exceed iterations")
    return 100.0 * successes / iterations


def steps_to_threshold(log: TrainLog, agent: int, threshold_pct: float) -> int | None:
    """First step whose full-window rolling rate reaches the threshold.

    Windows shorter than the configured rolling window are skipped, so a
    lucky opening streak cannot satisfy the threshold. Returns None when
    the threshold is never reached.
    """
    for i, rec in enumerate(log.agent_records(agent)):
        if i + 1 >= log.rolling_window and rec.rolling_sr * 100.0 >= threshold_pct:
            return rec.step
    return None


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_log_csv(path: Path, log: TrainLog, scenario: str, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER.split(","))
        for r in log.records:
            writer.writerow(
                [
                    scenario,
                    seed,
                    r.agent,
                    r.step,
                    _fmt(r.epsilon),
                    _fmt(r.reward),
                    r.success,
                    _fmt(r.mu),
                    _fmt(r.loss),
                    _fmt(r.rolling_sr),
                ]
            )


@dataclass
class SeedResult:
    scenario: str
    seed: int
    failed: bool
    steps_to_threshold: int | None = None
    pretrain_steps: int | None = None
    final_rolling_sr: float | None = None
    csv_path: str | None = None
    error: str | None = None


def _pretrain_cache_paths(cache_dir: Path, scenario: Scenario, seed: int):
    cfg = scenario.pretrain_config(seed)
    digest_src = json.dumps(
        {"cfg": cfg.to_dict(), "grade": scenario.pretrain_grade}, sort_keys=True
    )
    import hashlib

    digest = hashlib.sha256(digest_src.encode()).hexdigest()[:12]
    stem = cache_dir / f"pretrain_{digest}_seed{seed}_g{scenario.pretrain_grade:g}"
    return stem.with_suffix(".params"), stem.with_suffix(".meta.json")


def _pretrained_params(scenario: Scenario, seed: int, cache_dir: Path | None):
    """Pretrain (or load from cache): returns (params, steps, cached)."""
    if cache_dir is not None:
        params_path, meta_path = _pretrain_cache_paths(cache_dir, scenario, seed)
        if params_path.exists() and meta_path.exists():
            params, _ = load_params(params_path)
            meta = json.loads(meta_path.read_text())
            return params, meta["pretrain_steps"], True
    cfg = scenario.pretrain_config(seed)
    params, log = pretrain_run(cfg, scenario.pretrain_grade)
    steps = len(log.agent_records(0))
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        params_path, meta_path = _pretrain_cache_paths(cache_dir, scenario, seed)
        save_params(params_path, params, cfg.resolved_layout())
        meta_path.write_text(json.dumps({"pretrain_steps": steps, "seed": seed}))
    return params, steps, False


def run_scenario_seed(
    scenario: Scenario,
    seed: int,
    out_dir: Path,
    pretrain_cache: Path | None = None,
) -> SeedResult:
    """One seeded run: pretrain, co-train/continue, emit CSV + manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}__seed{seed}"
    try:
        params, pretrain_steps, cached = _pretrained_params(scenario, seed, pretrain_cache)
    except PretrainTargetError as err:
        result = SeedResult(scenario.name, seed, failed=True, error=str(err))
        (out_dir / f"{stem}.summary.json").write_text(
            json.dumps(result.__dict__, indent=2)
        )
        return result

    cfg = scenario.strategy_config(seed, params)
    log = train(cfg)

    csv_path = out_dir / f"{stem}.csv"
    write_log_csv(csv_path, log, scenario.name, seed)

    manifest = {
        "scenario": scenario.to_dict(),
        "seed": seed,
        "pretrain_config": scenario.pretrain_config(seed).to_dict(),
        "pretrain_steps": pretrain_steps,
        "pretrain_cached": cached,
        "strategy_config": cfg.to_dict(),
        "pseudo_real_agent": PSEUDO_REAL_AGENT,
        "version": __version__,
        "written_at_unix": time.time(),  # excluded from reproducibility checks
    }
    (out_dir / f"{stem}.manifest.json").write_text(json.dumps(manifest, indent=2))

    reached = steps_to_threshold(log, PSEUDO_REAL_AGENT, scenario.threshold_pct)
    result = SeedResult(
        scenario=scenario.name,
        seed=seed,
        failed=False,
        steps_to_threshold=reached,
        pretrain_steps=pretrain_steps,
        final_rolling_sr=log.last_rolling_sr(PSEUDO_REAL_AGENT),
        csv_path=str(csv_path),
    )
    (out_dir / f"{stem}.summary.json").write_text(json.dumps(result.__dict__, indent=2))
    return result


def median_iqr(values: list[int | None]) -> dict:
    """Median/IQR with unreached runs treated as +inf (censored)."""
    arr = np.array([np.inf if v is None else float(v) for v in values])
    with np.errstate(invalid="ignore"):
        med = float(np.median(arr)) if arr.size else None
        q1, q3 = (
            (float(np.percentile(arr, 25)), float(np.percentile(arr, 75)))
            if arr.size
            else (None, None)
        )

    def jsonable(x):
        return None if x is None or not np.isfinite(x) else x

    return {
        "median": jsonable(med),
        "iqr_low": jsonable(q1),
        "iqr_high": jsonable(q3),
        "reached": int(np.sum(np.isfinite(arr))),
        "total": int(arr.size),
    }


def run_battery(
    scenarios: list[Scenario],
    out_dir: Path,
    battery_name: str = "battery",
    pretrain_cache: Path | None = None,
) -> dict:
    """Run every scenario over its seeds; write the cross-seed summary.

    Returns the battery summary dict; ``any_failed`` marks seeds whose
    pretraining never reached the grade (those runs are skipped, the
    battery continues).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = pretrain_cache if pretrain_cache is not None else out_dir / "pretrain_cache"
    summary: dict = {"battery": battery_name, "scenarios": {}, "any_failed": False}
    for scenario in scenarios:
        per_seed: dict = {}
        for seed in scenario.seeds:
            result = run_scenario_seed(scenario, seed, out_dir, pretrain_cache=cache)
            per_seed[str(seed)] = {
                "failed": result.failed,
                "steps_to_threshold": result.steps_to_threshold,
                "pretrain_steps": result.pretrain_steps,
                "final_rolling_sr": result.final_rolling_sr,
            }
            if result.failed:
                summary["any_failed"] = True
        reached_values = [
            v["steps_to_threshold"] for v in per_seed.values() if not v["failed"]
        ]
        summary["scenarios"][scenario.name] = {
            "strategy": scenario.strategy,
            "num_sim_agents": scenario.num_sim_agents,
            "pretrain_grade": scenario.pretrain_grade,
            "per_seed": per_seed,
            "steps_to_threshold": median_iqr(reached_values),
        }
    (out_dir / "battery_summary.json").write_text(json.dumps(summary, indent=2))
    return summary


DEFAULT_SEEDS = tuple(range(10))


def battery_definition(name: str, seeds=DEFAULT_SEEDS) -> list[Scenario]:
    """Built-in batteries for the three headline studies."""
    if name == "fig3":
        return [
            Scenario("sim_and_real_3sim", "sim_and_real", 3, 0.5, tuple(seeds)),
            Scenario("sim_to_real", "sim_to_real", 0, 0.5, tuple(seeds)),
        ]
    if name == "fig5":
        return [
            Scenario(f"sim_and_real_3sim_g{int(g * 100):02d}", "sim_and_real", 3, g, tuple(seeds))
            for g in (0.3, 0.5, 0.7, 0.9)
        ]
    if name == "fig6":
        return [
            Scenario(f"sim_and_real_{n}sim", "sim_and_real", n, 0.5, tuple(seeds))
            for n in (1, 2, 3)
        ]
    raise ScenarioError(f"unknown battery {name!r} (expected fig3, fig5, or fig6)")


def read_log_csv(path) -> list[dict]:
    """Parse one run CSV back into typed row dicts."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "scenario": row["scenario"],
                    "seed": int(row["seed"]),
                    "agent": int(row["agent"]),
                    "step": int(row["step"]),
                    "epsilon": float(row["epsilon"]),
                    "reward": float(row["reward"]),
                    "success": int(row["success"]),
                    "mu": float(row["mu"]),
                    "loss": float(row["loss"]) if row["loss"] else None,
                    "rolling_sr": float(row["rolling_sr"]),
                }
            )
    return rows


def recompute_from_csv(path, agent: int, threshold_pct: float, window: int):
    """Independent recomputation of rolling rates and the threshold step.

    Rebuilds the rolling success rate from the raw success column
    (ignoring the CSV's own rolling_sr) and returns
    (first step at threshold or None, list of (step, recomputed rolling)).
    """
    rows = [r for r in read_log_csv(path) if r["agent"] == agent]
    rows.sort(key=lambda r: r["step"])
    window_vals: list[int] = []
    rolling = []
    reached = None
    for i, r in enumerate(rows):
        window_vals.append(r["success"])
        if len(window_vals) > window:
            del window_vals[0]
        sr = success_rate(sum(window_vals), len(window_vals))
        rolling.append((r["step"], sr / 100.0))
        if reached is None and i + 1 >= window and sr >= threshold_pct:
            reached = r["step"]
    return reached, rolling
