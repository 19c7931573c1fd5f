"""Dense Q-map network over heightmap states, with manual gradients.

A small fully-convolutional net maps a 2-channel state (intensity
heightmap, depth heightmap) to an H x W grid of action values; the
argmax cell is the suction target. All layers are same-size
zero-padded convolutions, so the map never loses resolution and the
parameter count stays small enough for finite-difference checking.

Weights live in a single flat float64 vector whose packing order is
fixed by the layout (per layer: conv kernel C-order, then biases).
Training routes the loss gradient through exactly one output cell: the
cell the action was executed on. Everything here is pure; RNGs are
passed in explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class LayoutMismatchError(ValueError):
    """Parameter vector or state shape does not match the layout."""


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    in_channels: int
    out_channels: int
    relu: bool

    @property
    def weight_count(self) -> int:
        return self.out_channels * self.in_channels * self.kernel * self.kernel

    @property
    def param_count(self) -> int:
        return self.weight_count + self.out_channels


@dataclass(frozen=True)
class NetLayout:
    """Shapes of the convolution stack plus the expected input grid."""

    height: int
    width: int
    in_channels: int
    layers: tuple[ConvSpec, ...]

    def __post_init__(self):
        chans = self.in_channels
        for spec in self.layers:
            if spec.in_channels != chans:
                raise LayoutMismatchError(
                    f"layer expects {spec.in_channels} channels, previous produces {chans}"
                )
            if spec.kernel % 2 != 1:
                raise LayoutMismatchError("only odd kernels supported (same-size padding)")
            chans = spec.out_channels
        if chans != 1:
            raise LayoutMismatchError("final layer must produce a single Q channel")

    @property
    def param_count(self) -> int:
        return sum(spec.param_count for spec in self.layers)

    def slices(self) -> list[tuple[slice, slice]]:
        """Per layer: (weight slice, bias slice) into the flat vector."""
        out = []
        offset = 0
        for spec in self.layers:
            w = slice(offset, offset + spec.weight_count)
            b = slice(w.stop, w.stop + spec.out_channels)
            out.append((w, b))
            offset = b.stop
        return out

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "in_channels": self.in_channels,
            "layers": [
                [s.kernel, s.in_channels, s.out_channels, s.relu] for s in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetLayout":
        layers = tuple(ConvSpec(k, ci, co, bool(r)) for k, ci, co, r in d["layers"])
        return cls(d["height"], d["width"], d["in_channels"], layers)


def default_layout(height: int = 16, width: int = 16) -> NetLayout:
    """Production layout: 2ch -> 8 -> 8 -> 1, all same-size convs."""
    return NetLayout(
        height,
        width,
        in_channels=2,
        layers=(
            ConvSpec(3, 2, 8, relu=True),
            ConvSpec(3, 8, 8, relu=True),
            ConvSpec(1, 8, 1, relu=False),
        ),
    )


def toy_layout(height: int = 8, width: int = 8) -> NetLayout:
    """Small layout used by gradient-check oracles."""
    return NetLayout(
        height,
        width,
        in_channels=2,
        layers=(
            ConvSpec(3, 2, 4, relu=True),
            ConvSpec(3, 4, 4, relu=True),
            ConvSpec(1, 4, 1, relu=False),
        ),
    )


@dataclass(frozen=True)
class Action:
    """Pick command: grid cell (x = column, y = row) plus height in metres."""

    x: int
    y: int
    z: float


def init_params(layout: NetLayout, seed: int) -> np.ndarray:
    """Deterministic init: weights uniform in +-sqrt(1/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    params = np.zeros(layout.param_count)
    for spec, (w, b) in zip(layout.layers, layout.slices()):
        scale = np.sqrt(1.0 / (spec.in_channels * spec.kernel * spec.kernel))
        params[w] = rng.uniform(-scale, scale, spec.weight_count)
        # bias slice stays zero
    return params


def _check_params(layout: NetLayout, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (layout.param_count,):
        raise LayoutMismatchError(
            f"expected {layout.param_count} parameters, got shape {params.shape}"
        )
    return params


def _check_state(layout: NetLayout, state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    expected = (layout.in_channels, layout.height, layout.width)
    if state.shape != expected:
        raise LayoutMismatchError(f"state shape {state.shape} != layout {expected}")
    return state


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """Patch matrix of shape (C*k*k, H*W) for a same-size zero-padded conv."""
    c, h, w = x.shape
    if kernel == 1:
        return x.reshape(c, h * w)
    pad = kernel // 2
    padded = np.zeros((c, h + 2 * pad, w + 2 * pad))
    padded[:, pad : pad + h, pad : pad + w] = x
    cols = np.empty((c, kernel, kernel, h, w))
    for dy in range(kernel):
        for dx in range(kernel):
            cols[:, dy, dx] = padded[:, dy : dy + h, dx : dx + w]
    return cols.reshape(c * kernel * kernel, h * w)


def _forward_cached(layout: NetLayout, params: np.ndarray, state: np.ndarray):
    """Run the conv stack, returning the Q-map and per-layer caches."""
    x = state
    caches = []
    for spec, (wsl, bsl) in zip(layout.layers, layout.slices()):
        weights = params[wsl].reshape(
            spec.out_channels, spec.in_channels * spec.kernel * spec.kernel
        )
        bias = params[bsl]
        cols = _im2col(x, spec.kernel)
        pre = (weights @ cols + bias[:, None]).reshape(
            spec.out_channels, layout.height, layout.width
        )
        caches.append((cols, pre))
        x = np.maximum(pre, 0.0) if spec.relu else pre
    return x[0], caches


def forward(layout: NetLayout, params: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Q-map of shape (H, W) for one state."""
    params = _check_params(layout, params)
    state = _check_state(layout, state)
    qmap, _ = _forward_cached(layout, params, state)
    return qmap


def huber_loss(xi: float) -> float:
    """0.5*xi^2 inside the unit band, |xi| - 0.5 outside."""
    axi = abs(xi)
    return 0.5 * xi * xi if axi < 1.0 else axi - 0.5


def huber_grad(xi: float) -> float:
    """Derivative of the Huber loss: xi clipped to [-1, 1]."""
    return float(np.clip(xi, -1.0, 1.0))


def td_target(reward: float, next_q: np.ndarray, gamma: float, done: bool) -> float:
    """Bootstrapped target: reward plus discounted max of the next Q-map."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    if done:
        return float(reward)
    return float(reward) + gamma * float(np.max(next_q))


def td_error(q_value: float, target: float) -> float:
    return float(q_value) - float(target)


def _backprop(
    layout: NetLayout,
    params: np.ndarray,
    caches: list,
    action: Action,
    upstream: float,
) -> np.ndarray:
    """Backpropagate a single-cell upstream scalar through cached layers."""
    grad = np.zeros_like(params)
    h, w = layout.height, layout.width
    d_out = np.zeros((1, h, w))
    d_out[0, action.y, action.x] = upstream

    slices = layout.slices()
    for i in range(len(layout.layers) - 1, -1, -1):
        spec = layout.layers[i]
        wsl, bsl = slices[i]
        cols, pre = caches[i]
        if spec.relu:
            d_out = d_out * (pre > 0.0)
        d_flat = d_out.reshape(spec.out_channels, h * w)
        grad[wsl] = (d_flat @ cols.T).ravel()
        grad[bsl] = d_flat.sum(axis=1)
        if i == 0:
            break  # no input gradient needed below the first layer
        weights = params[wsl].reshape(
            spec.out_channels, spec.in_channels, spec.kernel, spec.kernel
        )
        pad = spec.kernel // 2
        d_padded = np.zeros((spec.in_channels, h + 2 * pad, w + 2 * pad))
        for dy in range(spec.kernel):
            for dx in range(spec.kernel):
                d_padded[:, dy : dy + h, dx : dx + w] += np.tensordot(
                    weights[:, :, dy, dx], d_out, axes=(0, 0)
                )
        d_out = d_padded[:, pad : pad + h, pad : pad + w] if pad else d_padded
    return grad


def backward(
    layout: NetLayout,
    params: np.ndarray,
    state: np.ndarray,
    action: Action,
    xi: float,
) -> np.ndarray:
    """Gradient of the Huber loss of ``xi`` routed through one Q-map cell.

    The upstream scalar at cell (action.y, action.x) is the clipped TD
    error; every other cell contributes exactly zero, so the returned
    flat gradient is identically zero when xi == 0.
    """
    params = _check_params(layout, params)
    state = _check_state(layout, state)
    if not (0 <= action.x < layout.width and 0 <= action.y < layout.height):
        raise ValueError(f"action cell ({action.x}, {action.y}) out of bounds")

    upstream = huber_grad(xi)
    if upstream == 0.0:
        return np.zeros_like(params)
    _, caches = _forward_cached(layout, params, state)
    return _backprop(layout, params, caches, action, upstream)


def apply_sgd(params: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    """One plain gradient-descent step, elementwise."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape:
        raise LayoutMismatchError(
            f"parameter shape {params.shape} != gradient shape {grad.shape}"
        )
    return params - alpha * grad


def select_action(
    qmap: np.ndarray,
    depth: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> Action:
    """Epsilon-greedy cell choice; z is read from the depth heightmap.

    Greedy ties break toward the lowest row-major index. Exploration
    draws one uniform cell. Exactly one rng.random() coin is consumed
    per call, plus one rng.integers() draw on the explore branch.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    h, w = qmap.shape
    if rng.random() < epsilon:
        flat = int(rng.integers(0, h * w))
    else:
        flat = int(np.argmax(qmap))
    y, x = divmod(flat, w)
    return Action(x=x, y=y, z=float(depth[y, x]))


def save_params(path, params: np.ndarray, layout: NetLayout) -> None:
    """Checkpoint a flat vector as little-endian float64 + layout sidecar."""
    path = Path(path)
    params = _check_params(layout, params)
    path.write_bytes(params.astype("<f8").tobytes())
    sidecar = {"layout": layout.to_dict(), "count": int(params.size), "dtype": "<f8"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_params(path) -> tuple[np.ndarray, NetLayout]:
    """Inverse of ``save_params``; round-trips bit-exactly."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    layout = NetLayout.from_dict(sidecar["layout"])
    params = np.frombuffer(path.read_bytes(), dtype="<f8").astype(float)
    if params.size != layout.param_count:
        raise LayoutMismatchError(
            f"checkpoint holds {params.size} values, layout wants {layout.param_count}"
        )
    return params, layout
