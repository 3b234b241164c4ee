# file: app/services/network_service.py
"""
Communication graphs and mixing matrices.

A `MixingSpec` is only ever produced by `from_matrix`, which checks every
mixing-matrix clause (symmetry, sparsity, stochasticity and spectrum) and
caches the eigendecomposition used by the rest of the toolkit.
"""
import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.linalg import eigh

from app.core.errors import GraphError, MixingMatrixError

log = logging.getLogger("dgdlab.services.network")

# --- Validation Tolerances ---
ROW_SUM_TOL = 1e-12
SPECTRUM_TOL = 1e-10

Edge = Tuple[int, int]


@dataclass(frozen=True)
class Graph:
    node_count: int
    edges: FrozenSet[Edge] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise GraphError(f"node_count must be positive, got {self.node_count}")
        for i, j in self.edges:
            if not (0 <= i < j < self.node_count):
                raise GraphError(f"edge ({i}, {j}) is not a normalized pair of nodes in [0, {self.node_count})")

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[Sequence[int]]) -> "Graph":
        seen: set = set()
        for edge in edges:
            if len(edge) != 2:
                raise GraphError(f"edge {list(edge)} must have exactly two endpoints")
            i, j = int(edge[0]), int(edge[1])
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            pair = (min(i, j), max(i, j))
            if pair in seen:
                raise GraphError(f"duplicate edge {pair}")
            seen.add(pair)
        return cls(node_count=node_count, edges=frozenset(seen))

    @classmethod
    def from_networkx(cls, g: nx.Graph) -> "Graph":
        nodes = sorted(g.nodes)
        index = {node: pos for pos, node in enumerate(nodes)}
        return cls.from_edges(len(nodes), [(index[u], index[v]) for u, v in g.edges])

    @classmethod
    def from_matrix_pattern(cls, weights: np.ndarray) -> "Graph":
        """Edge set read off the nonzero off-diagonal pattern of a square matrix."""
        w = np.asarray(weights, dtype=float)
        n = w.shape[0]
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if w[i, j] != 0 or w[j, i] != 0]
        return cls.from_edges(n, edges)

    def sorted_edges(self) -> List[Edge]:
        return sorted(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.node_count))
        g.add_edges_from(self.sorted_edges())
        return g

    def components(self) -> List[List[int]]:
        comps = [sorted(c) for c in nx.connected_components(self.to_networkx())]
        return sorted(comps, key=lambda c: c[0])

    def is_connected(self) -> bool:
        return len(self.components()) == 1


@dataclass(frozen=True, eq=False)
class MixingSpec:
    weights: np.ndarray
    graph: Graph
    spectrum: np.ndarray
    eigenvectors: np.ndarray
    zeta: float
    lambda_min: float

    @property
    def n(self) -> int:
        return self.graph.node_count

    def mix(self, x: np.ndarray) -> np.ndarray:
        # einsum keeps a fixed ascending-j reduction, independent of BLAS threading
        return np.einsum("ij,...jk->...ik", self.weights, x)

    def semi_norm_sq(self, x: np.ndarray) -> float | np.ndarray:
        """<x, (I - W) x> in the Frobenius inner product; one value per iterate of a batch."""
        x = np.asarray(x, dtype=float)
        totals = np.sum(x * (x - self.mix(x)), axis=(-2, -1))
        return float(totals) if np.ndim(totals) == 0 else totals


@dataclass(frozen=True)
class SafeStepBounds:
    dgd: float
    prox_nonconvex: Optional[float]


def from_matrix(entries: Sequence[Sequence[float]] | np.ndarray, graph: Optional[Graph] = None) -> MixingSpec:
    w = np.array(entries, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise MixingMatrixError(["shape"], [f"matrix must be square, got shape {w.shape}"])
    if graph is None:
        graph = Graph.from_matrix_pattern(w)
    n = graph.node_count
    if w.shape != (n, n):
        raise MixingMatrixError(["shape"], [f"matrix shape {w.shape} does not match node_count {n}"])

    clauses: List[str] = []
    details: List[str] = []

    def violate(clause: str, detail: str) -> None:
        clauses.append(clause)
        details.append(f"{clause}: {detail}")

    asym = float(np.max(np.abs(w - w.T))) if n > 1 else 0.0
    if asym != 0.0:
        violate("symmetry", f"max |W_ij - W_ji| = {asym:.3e}")

    adj = graph.adjacency()
    off_edge = ~adj & ~np.eye(n, dtype=bool)
    if np.any(w[off_edge] != 0.0):
        i, j = np.argwhere((w != 0.0) & off_edge)[0]
        violate("sparsity", f"W[{i},{j}] = {w[i, j]:.6g} but ({i},{j}) is not an edge")
    if np.any(w[adj] <= 0.0):
        i, j = np.argwhere((w <= 0.0) & adj)[0]
        violate("edge_weight", f"W[{i},{j}] = {w[i, j]:.6g} must be positive on edge ({i},{j})")

    row_err = float(np.max(np.abs(w.sum(axis=1) - 1.0)))
    if row_err > ROW_SUM_TOL:
        violate("row_sum", f"max |row sum - 1| = {row_err:.3e}")

    if "symmetry" in clauses:
        log.warning(f"Rejecting mixing matrix: {details}")
        raise MixingMatrixError(clauses, details)

    values, vectors = eigh(w)
    order = np.argsort(values)[::-1]
    spectrum = values[order]
    vectors = vectors[:, order]

    if spectrum[0] > 1.0 + SPECTRUM_TOL:
        violate("spectrum_upper", f"lambda_1 = {spectrum[0]:.12g} exceeds 1")
    if spectrum[-1] <= -1.0 + SPECTRUM_TOL:
        violate("spectrum_lower", f"lambda_n = {spectrum[-1]:.12g} is not above -1")
    if n > 1 and spectrum[0] - spectrum[1] <= SPECTRUM_TOL:
        violate("null_space", f"lambda_1 is not simple (lambda_1 - lambda_2 = {spectrum[0] - spectrum[1]:.3e})")

    if clauses:
        log.warning(f"Rejecting mixing matrix: {details}")
        raise MixingMatrixError(clauses, details)

    zeta = float(max(abs(spectrum[1]), abs(spectrum[-1]))) if n > 1 else 0.0
    w.setflags(write=False)
    spectrum.setflags(write=False)
    vectors.setflags(write=False)
    return MixingSpec(
        weights=w,
        graph=graph,
        spectrum=spectrum,
        eigenvectors=vectors,
        zeta=zeta,
        lambda_min=float(spectrum[-1]),
    )


def build_metropolis(graph: Graph, lazy: bool = False) -> MixingSpec:
    """
    Metropolis weights W_ij = 1/(1 + max(deg_i, deg_j)) on edges, with the
    diagonal absorbing the remainder. `lazy=True` returns (I + W)/2, whose
    spectrum lies in (0, 1].
    """
    components = graph.components()
    if len(components) > 1:
        raise GraphError(f"graph is disconnected; components: {components}", components)

    n = graph.node_count
    deg = graph.degrees()
    w = np.zeros((n, n))
    for i, j in graph.sorted_edges():
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    if lazy:
        w = 0.5 * (np.eye(n) + w)
    return from_matrix(w, graph)


def power_deviation(mix: MixingSpec, k: int) -> float:
    """
    Spectral norm of W^k - (1/n)11^T.

    Read off the cached eigendecomposition: removing the consensus direction
    leaves sum_{i>=2} lambda_i^k v_i v_i^T, whose norm is max_{i>=2} |lambda_i|^k.
    Forming W^k explicitly would bury small values under cancellation error.
    """
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if mix.n == 1:
        return 0.0
    return float(np.max(np.abs(mix.spectrum[1:]) ** k))


def safe_step_bounds(mix: MixingSpec, lipschitz: float) -> SafeStepBounds:
    if lipschitz <= 0:
        raise ValueError(f"Lipschitz constant must be positive, got {lipschitz}")
    dgd = (1.0 + mix.lambda_min) / lipschitz
    # eigensolver noise around lambda_n = 0 must not open the nonconvex regime
    prox = mix.lambda_min / lipschitz if mix.lambda_min > SPECTRUM_TOL else None
    return SafeStepBounds(dgd=dgd, prox_nonconvex=prox)


# --- Topology Helpers ---

def path_graph(n: int) -> Graph:
    return Graph.from_networkx(nx.path_graph(n))


def cycle_graph(n: int) -> Graph:
    if n < 3:
        return path_graph(n)
    return Graph.from_networkx(nx.cycle_graph(n))


def complete_graph(n: int) -> Graph:
    return Graph.from_networkx(nx.complete_graph(n))


def star_graph(n: int) -> Graph:
    if n == 1:
        return Graph(node_count=1)
    return Graph.from_networkx(nx.star_graph(n - 1))


def ring_with_chords(n: int = 10, chords: Sequence[Edge] = ((0, 5), (2, 7))) -> Graph:
    """Ring of n agents plus extra chords; the default stands in for the 10-agent experiment network."""
    ring = [(i, (i + 1) % n) for i in range(n)]
    return Graph.from_edges(n, ring + [tuple(c) for c in chords])


TOPOLOGIES = {
    "path": path_graph,
    "cycle": cycle_graph,
    "complete": complete_graph,
    "star": star_graph,
    "ring_with_chords": ring_with_chords,
}
