"""Grid-world suction environment with sim and pseudo-real fidelity.

The workspace is a square of ``bounds`` metres rendered as a
``grid_size`` x ``grid_size`` pair of heightmaps: an intensity channel
(objects bright on a dark background) and a depth channel (object
height in metres, zero elsewhere). Cube-shaped objects are placed at
continuous random centres; each covers a k x k cell footprint with
k = ceil(side / cell).

The ``sim`` profile renders a noiseless orthographic projection. The
``pseudo_real`` profile stands in for a physical robot: larger objects,
a radial barrel-distortion resample of both channels, i.i.d. Gaussian
depth noise clamped at zero, and a Bernoulli pick-failure chance on
otherwise-valid suctions.

A pick succeeds when the action cell lies on an object footprint (and
the failure coin passes). Sim rewards are banded by the distance mu
from the action position to the nearest object centre:

    r0 if mu <= mu_th,  r1 if mu <= 2*mu_th,  r2 if mu <= 3*mu_th,
    r3 beyond, all multiplied by the 0/1 success flag.

The pseudo-real reward is success * r0 with no distance gating.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .qnet import Action

GRID_SIZE = 16
WORKSPACE_BOUNDS = 0.448  # metres per side
BACKGROUND_INTENSITY = 0.1
OBJECT_INTENSITY_RANGE = (0.5, 1.0)
PLACEMENT_RETRIES = 256


class PlacementError(RuntimeError):
    """Objects could not be placed without overlap."""


class EmptyWorkspaceError(RuntimeError):
    """Operation requires at least one object in the workspace."""


@dataclass(frozen=True)
class FidelityProfile:
    """Environment fidelity: sim is exact, pseudo_real injects the domain gap."""

    kind: str
    object_side: float
    depth_noise_sigma: float = 0.0
    distortion_strength: float = 0.0
    pick_failure_prob: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sim", "pseudo_real"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.depth_noise_sigma < 0:
            raise ValueError("depth_noise_sigma must be >= 0")
        if not 0.0 <= self.pick_failure_prob < 1.0:
            raise ValueError("pick_failure_prob must be in [0, 1)")

    @classmethod
    def sim(cls, **overrides) -> "FidelityProfile":
        base = dict(kind="sim", object_side=0.05)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def pseudo_real(cls, **overrides) -> "FidelityProfile":
        base = dict(
            kind="pseudo_real",
            object_side=0.065,
            depth_noise_sigma=0.003,
            distortion_strength=0.05,
            pick_failure_prob=0.05,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "object_side": self.object_side,
            "depth_noise_sigma": self.depth_noise_sigma,
            "distortion_strength": self.distortion_strength,
            "pick_failure_prob": self.pick_failure_prob,
        }


@dataclass(frozen=True)
class RewardBands:
    """Distance-banded suction rewards and the band width mu_th."""

    r0: float = 2000.0
    r1: float = 1000.0
    r2: float = 100.0
    r3: float = 1.0
    mu_th: float = 0.014  # half a cell; keeps bands non-degenerate on a 16x16 grid

    @classmethod
    def reference(cls) -> "RewardBands":
        """The 5 mm threshold preset used on the physical-scale setup."""
        return cls(mu_th=0.005)

    def to_dict(self) -> dict:
        return {"r0": self.r0, "r1": self.r1, "r2": self.r2, "r3": self.r3, "mu_th": self.mu_th}


@dataclass(frozen=True)
class Heightmaps:
    """Paired intensity and depth grids forming one observation."""

    color: np.ndarray
    depth: np.ndarray

    def stacked(self, depth_scale: float = 1.0) -> np.ndarray:
        """(2, H, W) network input: intensity channel, then scaled depth.

        Raw depth is metres (objects are a few centimetres tall), an
        order of magnitude weaker than the intensity channel; training
        passes a fixed scale so both channels carry comparable signal.
        """
        if depth_scale == 1.0:
            return np.stack([self.color, self.depth])
        return np.stack([self.color, self.depth * depth_scale])


@dataclass
class WorkspaceObject:
    center: tuple[float, float]  # (x, y) metres
    footprint: frozenset[tuple[int, int]]  # (row, col) cells
    height: float
    intensity: float


@dataclass
class WorkspaceState:
    """Mutable object arrangement owned by a single agent's environment."""

    objects: list[WorkspaceObject] = field(default_factory=list)
    bounds: float = WORKSPACE_BOUNDS
    grid_size: int = GRID_SIZE

    @property
    def cell_size(self) -> float:
        return self.bounds / self.grid_size

    @property
    def object_count(self) -> int:
        return len(self.objects)

    def cell_center(self, x: int, y: int) -> tuple[float, float]:
        """Metric position of the centre of grid cell (x=col, y=row)."""
        return ((x + 0.5) * self.cell_size, (y + 0.5) * self.cell_size)

    def to_json(self) -> dict:
        return {
            "bounds": self.bounds,
            "grid_size": self.grid_size,
            "objects": [
                {
                    "center": list(o.center),
                    "footprint": sorted(o.footprint),
                    "height": o.height,
                    "intensity": o.intensity,
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "WorkspaceState":
        objects = [
            WorkspaceObject(
                center=tuple(o["center"]),
                footprint=frozenset(tuple(c) for c in o["footprint"]),
                height=o["height"],
                intensity=o["intensity"],
            )
            for o in d["objects"]
        ]
        return cls(objects=objects, bounds=d["bounds"], grid_size=d["grid_size"])


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    success: int
    distance: float
    next_state: Heightmaps
    repositioned: bool


def footprint_cells(ws: WorkspaceState, center: tuple[float, float], side: float) -> frozenset:
    """k x k cell block nearest the continuous centre, k = ceil(side/cell)."""
    k = math.ceil(side / ws.cell_size - 1e-12)
    cx, cy = center
    col0 = int(round(cx / ws.cell_size - k / 2.0))
    row0 = int(round(cy / ws.cell_size - k / 2.0))
    col0 = min(max(col0, 0), ws.grid_size - k)
    row0 = min(max(row0, 0), ws.grid_size - k)
    return frozenset((row0 + r, col0 + c) for r in range(k) for c in range(k))


def _with_margin(cells: frozenset) -> set:
    out = set()
    for r, c in cells:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                out.add((r + dr, c + dc))
    return out


def reset(
    profile: FidelityProfile,
    num_objects: int,
    rng: np.random.Generator,
    bounds: float = WORKSPACE_BOUNDS,
    grid_size: int = GRID_SIZE,
) -> WorkspaceState:
    """Place ``num_objects`` cubes uniformly at random without overlap.

    Footprints keep at least one empty cell of margin from each other.
    Deterministic for a given rng state; raises PlacementError when a
    non-overlapping arrangement cannot be found within bounded retries.
    """
    if num_objects < 1:
        raise PlacementError("num_objects must be >= 1")
    ws = WorkspaceState(bounds=bounds, grid_size=grid_size)
    side = profile.object_side
    half = side / 2.0
    for _ in range(num_objects):
        placed = False
        for _ in range(PLACEMENT_RETRIES):
            cx = rng.uniform(half, bounds - half)
            cy = rng.uniform(half, bounds - half)
            cells = footprint_cells(ws, (cx, cy), side)
            margin = _with_margin(cells)
            if any(margin & o.footprint for o in ws.objects):
                continue
            intensity = rng.uniform(*OBJECT_INTENSITY_RANGE)
            ws.objects.append(
                WorkspaceObject(center=(cx, cy), footprint=cells, height=side, intensity=intensity)
            )
            placed = True
            break
        if not placed:
            raise PlacementError(
                f"could not place object {ws.object_count + 1}/{num_objects} "
                f"after {PLACEMENT_RETRIES} retries"
            )
    return ws


def _project(ws: WorkspaceState) -> Heightmaps:
    n = ws.grid_size
    color = np.full((n, n), BACKGROUND_INTENSITY)
    depth = np.zeros((n, n))
    for obj in ws.objects:
        for r, c in obj.footprint:
            color[r, c] = obj.intensity
            depth[r, c] = obj.height
    return Heightmaps(color=color, depth=depth)


def _barrel_resample(grid: np.ndarray, strength: float) -> np.ndarray:
    """Radial barrel-distortion resample; strength 0 is grid-exact identity."""
    n = grid.shape[0]
    center = (n - 1) / 2.0
    idx = np.arange(n, dtype=float)
    dy = (idx - center)[:, None] * np.ones((1, n))
    dx = np.ones((n, 1)) * (idx - center)[None, :]
    r2 = (dx / center) ** 2 + (dy / center) ** 2
    factor = 1.0 + strength * r2
    sy = np.clip(center + dy * factor, 0.0, n - 1.0)
    sx = np.clip(center + dx * factor, 0.0, n - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, n - 1)
    x1 = np.minimum(x0 + 1, n - 1)
    fy = sy - y0
    fx = sx - x0
    return (
        grid[y0, x0] * (1 - fy) * (1 - fx)
        + grid[y0, x1] * (1 - fy) * fx
        + grid[y1, x0] * fy * (1 - fx)
        + grid[y1, x1] * fy * fx
    )


def observe(ws: WorkspaceState, profile: FidelityProfile, rng: np.random.Generator) -> Heightmaps:
    """Orthographic top-down heightmaps; pseudo_real adds the domain gap.

    Distortion resampling is applied to both channels, then Gaussian
    noise (clamped at zero) to depth only. Zero-gap pseudo_real profiles
    render identically to sim and consume no randomness.
    """
    hm = _project(ws)
    if profile.kind == "sim":
        return hm
    color, depth = hm.color, hm.depth
    if profile.distortion_strength != 0.0:
        color = _barrel_resample(color, profile.distortion_strength)
        depth = _barrel_resample(depth, profile.distortion_strength)
    if profile.depth_noise_sigma > 0.0:
        depth = np.maximum(depth + rng.normal(0.0, profile.depth_noise_sigma, depth.shape), 0.0)
    return Heightmaps(color=color, depth=depth)


def distance_to_nearest(
    ws: WorkspaceState, point: tuple[float, float]
) -> tuple[float, WorkspaceObject]:
    """Euclidean distance from a metric point to the nearest object centre."""
    if not ws.objects:
        raise EmptyWorkspaceError("no objects in the workspace")
    best = None
    best_mu = math.inf
    for obj in ws.objects:
        mu = math.hypot(point[0] - obj.center[0], point[1] - obj.center[1])
        if mu < best_mu:
            best_mu = mu
            best = obj
    return best_mu, best


def action_distance(ws: WorkspaceState, action: Action) -> tuple[float, WorkspaceObject]:
    """Distance from the action cell's centre to the nearest object centre."""
    if not (0 <= action.x < ws.grid_size and 0 <= action.y < ws.grid_size):
        raise ValueError(f"action cell ({action.x}, {action.y}) out of bounds")
    return distance_to_nearest(ws, ws.cell_center(action.x, action.y))


def banded_reward(mu: float, success: int, bands: RewardBands) -> float:
    """Sim reward: four half-open distance bands, gated by the success flag."""
    if not success:
        return 0.0
    if mu <= bands.mu_th:
        return bands.r0
    if mu <= 2 * bands.mu_th:
        return bands.r1
    if mu <= 3 * bands.mu_th:
        return bands.r2
    return bands.r3


def pseudo_real_reward(success: int, bands: RewardBands) -> float:
    """Pseudo-real reward: success * r0, no distance gating."""
    return bands.r0 if success else 0.0


def attempt_pick(
    ws: WorkspaceState,
    action: Action,
    profile: FidelityProfile,
    rng: np.random.Generator,
    bands: RewardBands = RewardBands(),
    empty_threshold: int = 1,
) -> StepOutcome:
    """Execute one suction at the action cell, mutating the workspace.

    Success requires the cell to lie on a footprint and, for
    pseudo_real, a Bernoulli(1 - pick_failure_prob) draw. Successful
    picks remove the suctioned object. The repositioned flag marks the
    workspace dropping below ``empty_threshold`` objects; the caller
    resets on seeing it.
    """
    if not (0 <= action.x < ws.grid_size and 0 <= action.y < ws.grid_size):
        raise ValueError(f"action cell ({action.x}, {action.y}) out of bounds")
    if not ws.objects:
        raise EmptyWorkspaceError("attempt_pick on an empty workspace")

    cell = (action.y, action.x)
    target = next((o for o in ws.objects if cell in o.footprint), None)
    success = 0
    if target is not None:
        if profile.kind == "pseudo_real" and profile.pick_failure_prob > 0.0:
            success = int(rng.random() >= profile.pick_failure_prob)
        else:
            success = 1

    mu, _nearest = distance_to_nearest(ws, ws.cell_center(action.x, action.y))
    if profile.kind == "sim":
        reward = banded_reward(mu, success, bands)
    else:
        reward = pseudo_real_reward(success, bands)

    if success:
        ws.objects.remove(target)
    repositioned = ws.object_count < empty_threshold
    next_state = observe(ws, profile, rng)
    return StepOutcome(
        reward=reward,
        success=success,
        distance=mu,
        next_state=next_state,
        repositioned=repositioned,
    )


def dump_heightmaps(hm: Heightmaps, prefix) -> None:
    """Debug dump: write <prefix>.color.csv and <prefix>.depth.csv grids."""
    np.savetxt(f"{prefix}.color.csv", hm.color, delimiter=",")
    np.savetxt(f"{prefix}.depth.csv", hm.depth, delimiter=",")


class SuctionEnv:
    """Stateful wrapper owned by one agent worker: workspace + rng + profile."""

    def __init__(
        self,
        profile: FidelityProfile,
        num_objects: int,
        rng: np.random.Generator,
        bands: RewardBands = RewardBands(),
        empty_threshold: int = 1,
        bounds: float = WORKSPACE_BOUNDS,
        grid_size: int = GRID_SIZE,
    ):
        self.profile = profile
        self.num_objects = num_objects
        self.rng = rng
        self.bands = bands
        self.empty_threshold = empty_threshold
        self.bounds = bounds
        self.grid_size = grid_size
        self.ws = reset(profile, num_objects, rng, bounds=bounds, grid_size=grid_size)

    def ensure_ready(self) -> bool:
        """Reposition objects when the workspace has emptied out."""
        if self.ws.object_count < self.empty_threshold:
            self.ws = reset(
                self.profile, self.num_objects, self.rng,
                bounds=self.bounds, grid_size=self.grid_size,
            )
            return True
        return False

    def observe(self) -> Heightmaps:
        return observe(self.ws, self.profile, self.rng)

    def pick(self, action: Action) -> StepOutcome:
        return attempt_pick(
            self.ws, action, self.profile, self.rng,
            bands=self.bands, empty_threshold=self.empty_threshold,
        )
