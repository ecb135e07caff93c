"""Mixing polynomials of a gossip matrix and the primal preconditioner ``G = zeta I - eta P_tau(H)``.

Two evaluation oracles are provided, both costing ``tau`` communication
rounds: :func:`macc` for explicit coefficients and :func:`cacc` for the
Chebyshev polynomial. Stacked vectors are ``(N, d)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mappro.errors import ConfigurationError, InvariantViolation
from mappro.graph import GossipMatrix, SpectralBounds, positive_eigenvalues, spectral_bounds


class RoundCounter:
    """Cumulative communication rounds.

    One round is every node sending one d-vector to all of its neighbors.
    """

    def __init__(self, rounds=0):
        self.rounds = int(rounds)

    def add(self, n):
        self.rounds += int(n)

    def __repr__(self):
        return f"RoundCounter({self.rounds})"


def _check_stacked(y, P):
    y = np.asarray(y, dtype=float)
    if y.shape[0] != P.dim:
        raise ValueError(f"stacked vector has {y.shape[0]} blocks, gossip matrix has {P.dim}")
    return y


def macc(y, P, tau, a, counter=None):
    """Explicit mixing oracle: ``sum_t a[t-1] H^t y`` via ``tau`` neighbor rounds."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if len(a) != tau:
        raise ValueError(f"expected {tau} coefficients, got {len(a)}")
    y = _check_stacked(y, P)
    W = P.matrix
    cur = y
    out = np.zeros_like(y)
    for t in range(tau):
        cur = W @ cur
        out += a[t] * cur
    if counter is not None:
        counter.add(tau)
    return out


def cacc(y, P, tau, c1, counter=None):
    """Chebyshev mixing oracle.

    ``P`` must be rescaled so that its positive spectrum satisfies
    ``lambda_min + lambda_max = 2``; ``c1 = (kappa2 + 1) / (kappa2 - 1)``.
    Each eigen-direction with eigenvalue ``lam`` is scaled by
    ``1 - T_tau(c1 (1 - lam)) / T_tau(c1)``.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if not np.isfinite(c1):
        raise ConfigurationError(
            "Chebyshev mixing needs kappa2 > 1; use an Explicit spec (tau=1) instead"
        )
    y = _check_stacked(y, P)
    W = P.matrix
    b_prev, b = 1.0, c1
    y_prev = y
    y_cur = c1 * y - c1 * (W @ y)
    for _ in range(tau - 1):
        b_prev, b = b, 2 * c1 * b - b_prev
        y_prev, y_cur = y_cur, 2 * c1 * y_cur - y_prev - 2 * c1 * (W @ y_cur)
    if counter is not None:
        counter.add(tau)
    return y - y_cur / b


def chebyshev_t(n, x):
    """Chebyshev polynomial of the first kind, by the three-term recursion."""
    x = np.asarray(x, dtype=float)
    t_prev, t = np.ones_like(x), x
    if n == 0:
        return t_prev
    for _ in range(n - 1):
        t_prev, t = t, 2 * x * t - t_prev
    return t


def chebyshev_c1(kappa2):
    if kappa2 <= 1 + 1e-12:
        raise ConfigurationError(
            "Chebyshev mixing needs kappa2 > 1 (c1 is infinite); "
            "use an Explicit spec with tau=1 instead"
        )
    return (kappa2 + 1) / (kappa2 - 1)


def rescale_for_chebyshev(P):
    """Scale ``P`` by ``2/(lambda_min + lambda_max)``; returns ``(P', bounds')``."""
    b = spectral_bounds(P)
    total = b.lambda_min_pos + b.lambda_max
    if abs(total - 2.0) <= 1e-14:
        return P, b
    factor = 2.0 / total
    return P.scaled(factor), SpectralBounds(factor * b.lambda_min_pos, factor * b.lambda_max)


@dataclass(frozen=True)
class Explicit:
    """``P_tau(lam) = sum_t a_t lam^t``; default coefficients ``a_t = 1/tau``."""

    tau: int = 1
    coefficients: tuple = None

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigurationError("mixing degree tau must be >= 1")
        coeffs = self.coefficients
        if coeffs is None:
            coeffs = (1.0 / self.tau,) * self.tau
        coeffs = tuple(float(c) for c in coeffs)
        if len(coeffs) != self.tau:
            raise ConfigurationError(f"expected {self.tau} coefficients, got {len(coeffs)}")
        if not all(math.isfinite(c) for c in coeffs):
            raise ConfigurationError("mixing coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    def evaluate(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros_like(lam)
        power = np.ones_like(lam)
        for c in self.coefficients:
            power = power * lam
            out = out + c * power
        return out

    def bind(self, P):
        return BoundMixing(self, P, None)


@dataclass(frozen=True)
class Chebyshev:
    """Chebyshev mixing polynomial of degree ``tau``; ``c1`` is fixed when bound to ``P``."""

    tau: int = 3

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigurationError("mixing degree tau must be >= 1")

    def evaluate(self, lam, c1):
        lam = np.asarray(lam, dtype=float)
        return 1.0 - chebyshev_t(self.tau, c1 * (1.0 - lam)) / chebyshev_t(self.tau, c1)

    def bind(self, P):
        """Attach to ``H = P``; the oracle runs on ``P`` rescaled to ``lambda_min + lambda_max = 2``."""
        original = spectral_bounds(P)
        P_osc, b = rescale_for_chebyshev(P)
        scale = 1.0 if P_osc is P else 2.0 / (original.lambda_min_pos + original.lambda_max)
        return BoundMixing(self, P, chebyshev_c1(b.kappa2), P_osc, scale)


@dataclass(frozen=True, eq=False)
class BoundMixing:
    """A mixing spec attached to the gossip matrix ``P`` that plays the role of ``H``.

    For Chebyshev mixing the oracle runs on ``oracle_P = scale * P`` so the
    polynomial of ``H`` is ``lam -> p_cheb(scale * lam)``.
    """

    spec: object
    P: GossipMatrix
    c1: float = None
    oracle_P: GossipMatrix = None
    scale: float = 1.0
    _eigs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.oracle_P is None:
            object.__setattr__(self, "oracle_P", self.P)

    @property
    def tau(self):
        return self.spec.tau

    def apply(self, y, counter=None):
        if isinstance(self.spec, Chebyshev):
            return cacc(y, self.oracle_P, self.spec.tau, self.c1, counter)
        return macc(y, self.P, self.spec.tau, self.spec.coefficients, counter)

    def evaluate(self, lam):
        if isinstance(self.spec, Chebyshev):
            return self.spec.evaluate(self.scale * np.asarray(lam, dtype=float), self.c1)
        return self.spec.evaluate(lam)

    def positive_eigenvalues(self):
        if self._eigs is None:
            object.__setattr__(self, "_eigs", positive_eigenvalues(self.P.eigenvalues()))
        return self._eigs

    def dense(self):
        """Dense ``N x N`` matrix of the polynomial (diagnostics only)."""
        w, V = np.linalg.eigh(self.P.matrix)
        vals = self.evaluate(w)
        vals[np.abs(w) <= 1e-9 * np.abs(w).max()] = 0.0
        return (V * vals) @ V.T


def bind(spec, P):
    return spec.bind(P)


def polynomial_spectral_range(mixing, P=None):
    """Exact min/max of the mixing polynomial over the positive eigenvalues of ``P``.

    Accepts a bound mixing object, or an unbound spec together with ``P``.
    """
    if P is not None and not isinstance(mixing, BoundMixing):
        mixing = mixing.bind(P)
    vals = mixing.evaluate(mixing.positive_eigenvalues())
    lo, hi = float(vals.min()), float(vals.max())
    if lo <= 0:
        raise InvariantViolation(
            f"mixing polynomial is not positive on the active spectrum (min {lo:.3e})"
        )
    if isinstance(mixing.spec, Explicit) and all(c > 0 for c in mixing.spec.coefficients):
        lam = mixing.positive_eigenvalues()
        mono = float(mixing.evaluate(lam[-1]))
        if not math.isclose(mono, hi, rel_tol=1e-10):
            raise InvariantViolation("monotone range formula disagrees with the eigensolver")
    return lo, hi


def compute_eta(zeta, kappa1_target, poly_range):
    """``eta`` giving ``G`` condition number ``kappa1_target`` on the non-consensus subspace."""
    lo, hi = poly_range
    if kappa1_target < 1:
        raise ConfigurationError(f"kappa1 target must be >= 1, got {kappa1_target}")
    if not (hi >= lo > 0):
        raise ConfigurationError(f"invalid polynomial range {poly_range}")
    if kappa1_target == 1:
        return 0.0
    if hi - lo <= 1e-15 * hi:
        raise ConfigurationError(
            "kappa1 > 1 is unattainable: the mixing polynomial is constant on the active spectrum"
        )
    return zeta * (kappa1_target - 1) / (kappa1_target * hi - lo)


@dataclass(frozen=True, eq=False)
class GOperator:
    """``G = zeta I - eta P_tau(H)`` with its spectrum on the non-consensus subspace."""

    zeta: float
    eta: float
    mixing: BoundMixing

    def __post_init__(self):
        if not self.zeta > 0:
            raise ConfigurationError("zeta must be positive")
        if self.eta < 0:
            raise ConfigurationError("eta must be non-negative")
        if self.eta > 0:
            lo, hi = polynomial_spectral_range(self.mixing)
            if not self.eta * hi < self.zeta:
                raise ConfigurationError(
                    f"eta * lambda_max(P_tau) = {self.eta * hi:.6g} must be < zeta = {self.zeta:.6g}"
                )

    def spectrum(self):
        """Eigenvalues of G on the non-consensus subspace."""
        if self.eta == 0:
            n = len(self.mixing.positive_eigenvalues())
            return np.full(n, self.zeta)
        return self.zeta - self.eta * self.mixing.evaluate(self.mixing.positive_eigenvalues())

    @property
    def lambda_hat(self):
        return float(self.spectrum().max())

    @property
    def lambda_min(self):
        return float(self.spectrum().min())

    @property
    def kappa1(self):
        return self.lambda_hat / self.lambda_min

    def dense(self):
        n = self.mixing.P.dim
        if self.eta == 0:
            return self.zeta * np.eye(n)
        return self.zeta * np.eye(n) - self.eta * self.mixing.dense()


def apply_G(op, y, counter=None):
    """``zeta y - eta P_tau(H) y``; the oracle is skipped (no rounds) when ``eta = 0``."""
    if op.eta == 0:
        return op.zeta * np.asarray(y, dtype=float)
    return op.zeta * y - op.eta * op.mixing.apply(y, counter)
