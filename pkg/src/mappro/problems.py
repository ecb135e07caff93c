"""Problem instances: per-node smooth costs with gradient oracles.

Local costs are evaluated on stacked iterates ``X`` of shape ``(N, d)``
(row ``i`` is node ``i``'s copy of the decision variable).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from mappro.errors import ConfigurationError, SmoothnessViolation


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """``f(x) = sum_i f_i(x)`` with node-wise oracles.

    ``values(X)`` returns the ``N`` local costs ``f_i(X[i])`` and ``grads(X)``
    the ``(N, d)`` array of local gradients. ``M_bar`` bounds the smoothness of
    the stacked cost ``f~(X) = sum_i f_i(X[i])``, hence also of ``f / N``.
    """

    n_nodes: int
    dim: int
    values: Callable
    grads: Callable
    M_bar: float
    f_star: float = None
    nu: float = None
    name: str = "problem"
    info: dict = field(default_factory=dict)

    def stacked_value(self, X):
        return float(np.sum(self.values(X)))

    def f(self, x):
        """Global cost at a single ``d``-vector."""
        return self.stacked_value(np.broadcast_to(x, (self.n_nodes, self.dim)))

    def grad_f(self, x):
        return self.grads(np.broadcast_to(x, (self.n_nodes, self.dim))).sum(axis=0)


@dataclass(frozen=True, eq=False)
class LogisticNonconvexData:
    """Per-node binary classification samples.

    ``labels`` has shape ``(N, m)`` with entries in {-1, +1}; ``features`` has
    shape ``(N, m, d)``.
    """

    labels: np.ndarray
    features: np.ndarray
    lam: float = 0.001
    mu: float = 1.0

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=float)
        z = np.asarray(self.features, dtype=float)
        if y.ndim != 2 or z.ndim != 3 or z.shape[:2] != y.shape:
            raise ConfigurationError("labels must be (N, m) and features (N, m, d)")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ConfigurationError("labels must be -1 or +1")
        if self.lam <= 0 or self.mu <= 0:
            raise ConfigurationError("regularization parameters must be positive")
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "features", z)

    @property
    def shape(self):
        return self.features.shape

    def to_csv(self, path):
        n, m, d = self.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "label"] + [f"z{t}" for t in range(d)])
            for i in range(n):
                for s in range(m):
                    w.writerow(
                        [i, int(self.labels[i, s])] + [repr(float(v)) for v in self.features[i, s]]
                    )

    @classmethod
    def from_csv(cls, path, lam=0.001, mu=1.0):
        rows = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                rows.setdefault(int(row[0]), []).append(
                    (float(row[1]), [float(v) for v in row[2:]])
                )
        nodes = sorted(rows)
        if nodes != list(range(len(nodes))):
            raise ConfigurationError("node ids in dataset must be 0..N-1")
        sizes = {len(rows[i]) for i in nodes}
        if len(sizes) != 1:
            raise ConfigurationError("every node must hold the same number of samples")
        labels = np.array([[r[0] for r in rows[i]] for i in nodes])
        feats = np.array([[r[1] for r in rows[i]] for i in nodes])
        return cls(labels, feats, lam, mu)


def generate_benchmark_data(n=20, d=5, m=200, lam=0.001, mu=1.0, seed=0):
    """Standard-normal features and uniform +-1 labels, deterministic per seed."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, m, d))
    labels = rng.choice(np.array([-1.0, 1.0]), size=(n, m))
    return LogisticNonconvexData(labels, features, lam, mu)


def logistic_nonconvex(data):
    """Logistic loss with the nonconvex penalty ``lam mu x_t^2 / (1 + mu x_t^2)``."""
    y, Z = data.labels, data.features
    lam, mu = data.lam, data.mu
    n, m, d = Z.shape
    yz = y[:, :, None] * Z

    def values(X):
        margins = np.einsum("nmd,nd->nm", yz, X)
        loss = np.logaddexp(0.0, -margins).mean(axis=1)
        x2 = X * X
        return loss + (lam * mu * x2 / (1 + mu * x2)).sum(axis=1)

    def grads(X):
        margins = np.einsum("nmd,nd->nm", yz, X)
        w = expit(-margins)
        g = -np.einsum("nm,nmd->nd", w, yz) / m
        return g + 2 * lam * mu * X / (1 + mu * X * X) ** 2

    M_bar = float(np.max((Z**2).sum(axis=(1, 2)) / (4 * m) + 2 * lam * mu))
    return ProblemInstance(n, d, values, grads, M_bar, name="logistic_nonconvex")


def quadratic_problem(A_blocks, b_blocks, name="quadratic"):
    """``f_i(x) = 0.5 ||A_i x - b_i||^2`` with exact ``f*``, ``nu`` and ``M_bar``."""
    A = np.asarray(A_blocks, dtype=float)
    b = np.asarray(b_blocks, dtype=float)
    n, _, d = A.shape
    S = np.einsum("nri,nrj->ij", A, A)
    eigs = np.linalg.eigvalsh(S)
    top = eigs[-1]
    pos = eigs[eigs > 1e-9 * max(top, 1e-300)]
    A_all = A.reshape(-1, d)
    b_all = b.reshape(-1)
    x_star = np.linalg.pinv(A_all) @ b_all
    f_star = 0.5 * float(np.sum((A_all @ x_star - b_all) ** 2))

    def values(X):
        r = np.einsum("nri,ni->nr", A, X) - b
        return 0.5 * (r * r).sum(axis=1)

    def grads(X):
        r = np.einsum("nri,ni->nr", A, X) - b
        return np.einsum("nri,nr->ni", A, r)

    return ProblemInstance(
        n, d, values, grads, M_bar=float(top), f_star=f_star,
        nu=float(pos[0]) if len(pos) else None, name=name,
        info={"x_star": x_star, "hessian": S},
    )


def pl_quadratic(n_nodes, d, rank, seed, rows=None, b="random"):
    """Rank-deficient least squares: P-L but not strongly convex.

    ``sum_i A_i^T A_i`` has rank ``rank`` and is normalized to largest
    eigenvalue 1. ``b`` is ``"random"``, ``"zero"`` or ``"consistent"``.
    """
    if not 1 <= rank < d:
        raise ConfigurationError(f"need 1 <= rank < d, got rank={rank}, d={d}")
    rows = d if rows is None else rows
    if rows < 1:
        raise ConfigurationError("rows must be positive")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    C = rng.standard_normal((n_nodes, rows, rank))
    A = C @ U.T
    S = np.einsum("nri,nrj->ij", A, A)
    A /= np.sqrt(np.linalg.eigvalsh(S)[-1])
    if b == "random":
        bb = rng.standard_normal((n_nodes, rows))
    elif b == "zero":
        bb = np.zeros((n_nodes, rows))
    elif b == "consistent":
        bb = A @ rng.standard_normal(d)
    else:
        raise ConfigurationError(f"unknown b mode {b!r}")
    return quadratic_problem(A, bb, name="pl_quadratic")


def estimate_smoothness(p, n_probes=200, seed=0, target="stacked", directions=None, scale=1.0):
    """Empirical Lipschitz constant of the gradient over random probe pairs.

    ``target="stacked"`` probes ``f~`` on ``R^{Nd}``, ``"global"`` probes the
    average ``f / N`` on ``R^d``. Optional ``directions`` add pairs ``(x, x + h u)`` along given
    unit directions. Raises if the estimate exceeds the declared bound.
    """
    rng = np.random.default_rng(seed)
    shape = (p.n_nodes, p.dim) if target == "stacked" else (p.dim,)
    if target == "stacked":
        grad = p.grads
    elif target == "global":
        def grad(x):
            return p.grad_f(x) / p.n_nodes
    else:
        raise ConfigurationError(f"unknown target {target!r}")
    best = 0.0
    pairs = []
    for _ in range(n_probes):
        x = scale * rng.standard_normal(shape)
        y = scale * rng.standard_normal(shape)
        pairs.append((x, y))
    for u in directions or ():
        u = np.reshape(np.asarray(u, dtype=float), shape)
        for _ in range(max(1, n_probes // 10)):
            x = scale * rng.standard_normal(shape)
            h = scale * rng.uniform(0.1, 1.0)
            pairs.append((x, x + h * u / np.linalg.norm(u)))
    for x, y in pairs:
        dist = np.linalg.norm(x - y)
        if dist == 0:
            continue
        best = max(best, float(np.linalg.norm(grad(x) - grad(y)) / dist))
    if best > p.M_bar * (1 + 1e-6):
        raise SmoothnessViolation(
            f"empirical smoothness {best:.6g} exceeds declared M_bar {p.M_bar:.6g}"
        )
    return best


def check_gradient(p, n_points=100, seed=0, h=1e-6):
    """Largest relative mismatch between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        X = rng.standard_normal((p.n_nodes, p.dim))
        G = p.grads(X)
        fd = np.zeros_like(X)
        for t in range(p.dim):
            E = np.zeros_like(X)
            E[:, t] = h
            fd[:, t] = (p.values(X + E) - p.values(X - E)) / (2 * h)
        err = np.linalg.norm(G - fd) / max(np.linalg.norm(G), 1e-12)
        worst = max(worst, float(err))
    return worst
