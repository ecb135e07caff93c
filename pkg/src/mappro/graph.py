"""Connected undirected networks, neighbor-sparse gossip matrices and their spectra."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mappro.errors import ConfigurationError, InvariantViolation

ZERO_EIG_RTOL = 1e-9


@dataclass(frozen=True)
class Network:
    """Undirected simple graph on nodes ``0..n_nodes-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    n_nodes: int
    edges: frozenset
    adjacency: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ConfigurationError("a network needs at least one node")
        normalized = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise InvariantViolation(f"self-loop at node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise InvariantViolation(f"edge ({i}, {j}) out of range")
            e = (min(i, j), max(i, j))
            if e in normalized:
                raise InvariantViolation(f"duplicate edge {e}")
            normalized.add(e)
        object.__setattr__(self, "edges", frozenset(normalized))
        adj = [[] for _ in range(self.n_nodes)]
        for i, j in sorted(normalized):
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))
        if not self.is_connected():
            raise InvariantViolation("graph is not connected")

    @classmethod
    def from_edges(cls, n_nodes, edges):
        return cls(n_nodes, frozenset(tuple(e) for e in edges))

    @property
    def n_edges(self):
        return len(self.edges)

    def degree(self, i):
        return len(self.adjacency[i])

    def neighbors(self, i):
        return self.adjacency[i]

    def is_connected(self):
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_nodes

    def write_edge_list(self, path):
        lines = [f"{i} {j}" for i, j in sorted(self.edges)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_edge_list(cls, path, n_nodes=None):
        edges = []
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigurationError(f"bad edge-list line: {raw!r}")
            edges.append((int(parts[0]), int(parts[1])))
        if n_nodes is None:
            n_nodes = 1 + max((max(e) for e in edges), default=0)
        return cls.from_edges(n_nodes, edges)


def random_connected_graph(n_nodes, n_edges, seed):
    """Random connected graph with exactly ``n_edges`` edges.

    A random spanning tree (each node in a shuffled order attaches to a
    uniformly chosen earlier node) is completed with uniformly drawn
    non-tree edges.
    """
    max_edges = n_nodes * (n_nodes - 1) // 2
    if n_nodes < 1 or n_edges < n_nodes - 1 or n_edges > max_edges:
        raise ConfigurationError(
            f"cannot build a connected graph on {n_nodes} nodes with {n_edges} edges "
            f"(need {n_nodes - 1} <= edges <= {max_edges})"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_nodes)
    edges = set()
    for pos in range(1, n_nodes):
        u = int(order[pos])
        v = int(order[rng.integers(pos)])
        edges.add((min(u, v), max(u, v)))
    candidates = [
        (i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if (i, j) not in edges
    ]
    extra = n_edges - len(edges)
    if extra:
        picks = rng.choice(len(candidates), size=extra, replace=False)
        edges.update(candidates[int(p)] for p in sorted(picks))
    return Network(n_nodes, frozenset(edges))


def path_graph(n_nodes):
    return Network.from_edges(n_nodes, [(i, i + 1) for i in range(n_nodes - 1)])


def complete_graph(n_nodes):
    return Network.from_edges(
        n_nodes, [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)]
    )


@dataclass(frozen=True, eq=False)
class GossipMatrix:
    """Symmetric PSD, neighbor-sparse ``N x N`` matrix with null space ``span(1)``.

    Applying the Kronecker lift ``P (x) I_d`` to a stacked vector is done as
    ``P @ Y`` on its ``(N, d)`` reshaping; the lift is never materialized.
    """

    matrix: np.ndarray
    network: Network

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        self.validate()

    @property
    def dim(self):
        return self.matrix.shape[0]

    def validate(self):
        m = self.matrix
        n = self.network.n_nodes
        if m.shape != (n, n):
            raise InvariantViolation(f"matrix shape {m.shape} does not match {n} nodes")
        if not np.all(np.isfinite(m)):
            raise InvariantViolation("matrix has non-finite entries")
        scale = max(np.abs(m).max(), 1.0)
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
            raise InvariantViolation("matrix is not symmetric")
        allowed = np.eye(n, dtype=bool)
        for i, j in self.network.edges:
            allowed[i, j] = allowed[j, i] = True
        if np.any(m[~allowed] != 0.0):
            raise InvariantViolation("matrix is not neighbor-sparse")

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def apply(self, y):
        """Return ``(P (x) I_d) y`` for ``y`` of shape ``(N, d)`` or ``(N,)``."""
        return self.matrix @ y

    def scaled(self, factor):
        return GossipMatrix(factor * self.matrix, self.network)

    def to_csv(self, path):
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class SpectralBounds:
    lambda_min_pos: float
    lambda_max: float

    def __post_init__(self):
        if not (0 < self.lambda_min_pos <= self.lambda_max * (1 + 1e-12)):
            raise InvariantViolation(
                f"invalid spectral bounds ({self.lambda_min_pos}, {self.lambda_max})"
            )

    @property
    def kappa2(self):
        return max(self.lambda_max / self.lambda_min_pos, 1.0)


def laplacian(net, weighting="uniform"):
    """Graph Laplacian of ``net``.

    ``uniform`` gives ``L_ii = deg(i)``, ``L_ij = -1`` on edges; ``metropolis``
    uses off-diagonal weights ``-1/(1 + max(deg_i, deg_j))``.
    """
    n = net.n_nodes
    m = np.zeros((n, n))
    for i, j in net.edges:
        if weighting == "uniform":
            w = 1.0
        elif weighting == "metropolis":
            w = 1.0 / (1 + max(net.degree(i), net.degree(j)))
        else:
            raise ConfigurationError(f"unknown weighting {weighting!r}")
        m[i, j] = m[j, i] = -w
    m[np.diag_indices(n)] = -m.sum(axis=1)
    return GossipMatrix(m, net)


def positive_eigenvalues(eigs):
    """Split a symmetric PSD spectrum: returns the eigenvalues above the zero tolerance.

    Raises if the spectrum is numerically indefinite.
    """
    eigs = np.sort(np.asarray(eigs, dtype=float))
    top = eigs[-1]
    if top <= 0:
        raise InvariantViolation("matrix has no positive eigenvalue")
    tol = ZERO_EIG_RTOL * top
    if eigs[0] < -tol:
        raise InvariantViolation(f"matrix is indefinite (eigenvalue {eigs[0]:.3e})")
    return eigs[eigs > tol]


def spectral_bounds(m):
    """Smallest positive and largest eigenvalue of a gossip matrix.

    The null space must be exactly ``span(1)``: one eigenvalue at zero.
    """
    eigs = np.linalg.eigvalsh(m.matrix if isinstance(m, GossipMatrix) else m)
    pos = positive_eigenvalues(eigs)
    n = len(eigs)
    if n > 1 and len(pos) != n - 1:
        raise InvariantViolation(
            f"null space has dimension {n - len(pos)}, expected 1 (graph disconnected?)"
        )
    if n == 1:
        raise InvariantViolation("single-node gossip matrix has no positive spectrum")
    return SpectralBounds(float(pos[0]), float(pos[-1]))
