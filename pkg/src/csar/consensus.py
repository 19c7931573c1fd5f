"""Agent-interaction graphs and single-step parameter consensus.

An undirected weighted graph over M agents yields the Laplacian
L = D - A (degree minus adjacency). One consensus step blends the
stacked per-agent parameter rows x (shape M x n) as

    x <- (I - L) @ x

which is the per-coordinate form of the Kronecker-product update; the
M*n x M*n matrix is never materialised. With the default edge weight
1 / (d_max + 1) the mixing matrix I - L is row-stochastic with a
positive diagonal, so repeated steps contract every parameter
coordinate toward the per-component average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOPOLOGY_KINDS = ("complete", "star", "path", "custom")


class TopologyError(ValueError):
    """Invalid graph construction (bad index, weight, or kind)."""


@dataclass(frozen=True)
class Topology:
    """Undirected weighted agent graph.

    Edges are stored with index pairs normalised to (low, high); weights
    must be strictly positive and self-edges are rejected.
    """

    num_agents: int
    edges: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_agents < 1:
            raise TopologyError(f"num_agents must be >= 1, got {self.num_agents}")
        normalised = {}
        for (j, m), w in self.edges.items():
            if j == m:
                raise TopologyError(f"self-edge ({j},{m}) not allowed")
            if not (0 <= j < self.num_agents and 0 <= m < self.num_agents):
                raise TopologyError(f"edge ({j},{m}) out of range for M={self.num_agents}")
            if not (w > 0):
                raise TopologyError(f"edge ({j},{m}) has non-positive weight {w}")
            key = (min(j, m), max(j, m))
            if key in normalised and normalised[key] != w:
                raise TopologyError(f"conflicting weights for edge {key}")
            normalised[key] = float(w)
        object.__setattr__(self, "edges", normalised)

    def degree(self, agent: int) -> int:
        """Unweighted degree of one agent."""
        return sum(1 for (j, m) in self.edges if agent in (j, m))

    def max_degree(self) -> int:
        if not self.edges:
            return 0
        return max(self.degree(a) for a in range(self.num_agents))

    def to_dict(self) -> dict:
        return {
            "num_agents": self.num_agents,
            "edges": [[j, m, w] for (j, m), w in sorted(self.edges.items())],
        }


def default_edge_weight(num_agents: int, edge_pairs) -> float:
    """Uniform weight 1/(d_max+1) for the given unweighted edge set.

    Guarantees I - L is row-stochastic with positive diagonal, hence a
    stable and convergent consensus map.
    """
    pairs = {(min(j, m), max(j, m)) for j, m in edge_pairs}
    degrees = [0] * num_agents
    for j, m in pairs:
        degrees[j] += 1
        degrees[m] += 1
    d_max = max(degrees, default=0)
    return 1.0 / (d_max + 1)


def build_topology(
    kind: str,
    num_agents: int,
    edge_weight: float | None = None,
    custom_edges=None,
) -> Topology:
    """Construct a named topology over ``num_agents`` agents.

    Kinds: ``complete`` (all pairs), ``star`` (agent 0 is the hub),
    ``path`` (chain 0-1-...-M-1), ``custom`` (explicit ``custom_edges``
    as (j, m) pairs or (j, m, w) triples). When ``edge_weight`` is None
    the stable default 1/(d_max+1) is used for edges without an explicit
    weight.
    """
    if kind not in TOPOLOGY_KINDS:
        raise TopologyError(f"unknown topology kind {kind!r}, expected one of {TOPOLOGY_KINDS}")
    if num_agents < 1:
        raise TopologyError(f"num_agents must be >= 1, got {num_agents}")
    if edge_weight is not None and not (edge_weight > 0):
        raise TopologyError(f"edge_weight must be > 0, got {edge_weight}")

    if kind == "complete":
        pairs = [(j, m) for j in range(num_agents) for m in range(j + 1, num_agents)]
        explicit = {}
    elif kind == "star":
        pairs = [(0, m) for m in range(1, num_agents)]
        explicit = {}
    elif kind == "path":
        pairs = [(m, m + 1) for m in range(num_agents - 1)]
        explicit = {}
    else:
        pairs = []
        explicit = {}
        for entry in custom_edges or []:
            if len(entry) == 2:
                j, m = int(entry[0]), int(entry[1])
            elif len(entry) == 3:
                j, m = int(entry[0]), int(entry[1])
                explicit[(min(j, m), max(j, m))] = float(entry[2])
            else:
                raise TopologyError(f"custom edge {entry!r} must be (j, m) or (j, m, w)")
            if j == m or not (0 <= j < num_agents and 0 <= m < num_agents):
                raise TopologyError(f"edge ({j},{m}) invalid for M={num_agents}")
            pairs.append((j, m))

    if edge_weight is None:
        base = default_edge_weight(num_agents, pairs)
    else:
        base = float(edge_weight)
    edges = {}
    for j, m in pairs:
        key = (min(j, m), max(j, m))
        edges[key] = explicit.get(key, base)
    return Topology(num_agents=num_agents, edges=edges)


def adjacency(topology: Topology) -> np.ndarray:
    """Symmetric M x M adjacency matrix A."""
    a = np.zeros((topology.num_agents, topology.num_agents))
    for (j, m), w in topology.edges.items():
        a[j, m] = w
        a[m, j] = w
    return a


def laplacian(topology: Topology) -> np.ndarray:
    """Graph Laplacian L = D - A with D = diag of row sums of A.

    Rows sum to zero exactly (degree entries are the same float sums
    subtracted back out) and the matrix is symmetric positive
    semi-definite for any undirected topology.
    """
    a = adjacency(topology)
    return np.diag(a.sum(axis=1)) - a


def _check_stack(stack: np.ndarray, lap: np.ndarray) -> np.ndarray:
    stack = np.asarray(stack, dtype=float)
    if stack.ndim != 2:
        raise ValueError(f"parameter stack must be 2-D (M x n), got shape {stack.shape}")
    m = lap.shape[0]
    if lap.shape != (m, m):
        raise ValueError(f"Laplacian must be square, got shape {lap.shape}")
    if stack.shape[0] != m:
        raise ValueError(f"stack has {stack.shape[0]} rows but Laplacian is {m} x {m}")
    if not np.all(np.isfinite(stack)):
        raise ValueError("parameter stack contains non-finite entries")
    return stack


def consensus_step(stack: np.ndarray, lap: np.ndarray) -> np.ndarray:
    """One consensus step: row m becomes x_m + sum_k a_mk (x_k - x_m).

    Equivalent to (I - L) @ stack, applied per parameter coordinate.
    """
    stack = _check_stack(stack, lap)
    mixing = np.eye(lap.shape[0]) - lap
    return mixing @ stack


def iterate_consensus(stack: np.ndarray, lap: np.ndarray, steps: int) -> np.ndarray:
    """Apply ``consensus_step`` repeatedly; steps=0 returns the input."""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    out = _check_stack(stack, lap)
    for _ in range(steps):
        out = consensus_step(out, lap)
    return out


def connectivity_rank(lap: np.ndarray, rel_tol: float = 1e-9) -> int:
    """Numerical rank of the Laplacian via singular values.

    Singular values below ``rel_tol`` times the largest are treated as
    zero. A connected graph on M agents has rank M - 1.
    """
    svals = np.linalg.svd(np.asarray(lap, dtype=float), compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.sum(svals > rel_tol * svals[0]))


def is_connected(topology: Topology) -> bool:
    """True iff the graph is connected (rank of L equals M - 1)."""
    return connectivity_rank(laplacian(topology)) == topology.num_agents - 1


def mixing_is_stable(lap: np.ndarray, tol: float = 1e-12) -> bool:
    """Check the spectral stability precondition for consensus training.

    Requires I - L to be (entrywise) non-negative with strictly positive
    diagonal; the default edge weighting satisfies this by construction.
    """
    mixing = np.eye(lap.shape[0]) - np.asarray(lap, dtype=float)
    return bool(np.all(mixing >= -tol) and np.all(np.diag(mixing) > tol))


def max_pairwise_row_distance(stack: np.ndarray) -> float:
    """Largest euclidean distance between any two rows of the stack."""
    stack = np.asarray(stack, dtype=float)
    m = stack.shape[0]
    best = 0.0
    for j in range(m):
        for k in range(j + 1, m):
            best = max(best, float(np.linalg.norm(stack[j] - stack[k])))
    return best
