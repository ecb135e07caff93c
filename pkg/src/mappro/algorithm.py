"""MAP-Pro iteration, its Chebyshev variant, the L-ADMM reduction and theory-driven parameters.

One iteration, on stacked ``(N, d)`` iterates::

    z   = grad f~(x) + theta q + rho H x
    x+  = x - zeta z + eta P_tau(H) z
    q+  = q + rho H~ x+            with H~ = alpha_bar H

The dual starts in the zero-sum subspace and stays there because ``H~``
annihilates consensual vectors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from mappro.errors import ConfigurationError, DivergenceError, InfeasibleParameters
from mappro.graph import SpectralBounds
from mappro.mixing import (
    BoundMixing,
    Explicit,
    GOperator,
    RoundCounter,
    apply_G,
    compute_eta,
    polynomial_spectral_range,
)

DIVERGENCE_NORM = 1e12
DUAL_INIT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AlgoConfig:
    """Step parameters.

    ``mixing`` is the mixing polynomial bound to the gossip matrix ``P`` used
    as ``H``; it may be ``None`` for an abstract parameter set that is not run.
    ``schedule`` optionally maps ``k`` to ``(zeta_k, eta_k)``.
    """

    rho: float
    theta: float
    zeta: float
    eta: float
    alpha_bar: float
    mixing: BoundMixing = None
    mode: str = "tuned"
    name: str = "map_pro"
    schedule: Callable = None
    _ops: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for key in ("rho", "theta", "zeta", "alpha_bar"):
            v = getattr(self, key)
            if not (math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{key} must be positive and finite, got {v}")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ConfigurationError(f"eta must be non-negative, got {self.eta}")
        if self.mode not in ("theory", "tuned"):
            raise ConfigurationError(f"mode must be 'theory' or 'tuned', got {self.mode!r}")
        if self.mixing is not None:
            self.g_operator(0)

    @property
    def P(self):
        if self.mixing is None:
            raise ConfigurationError("configuration is not bound to a gossip matrix")
        return self.mixing.P

    @property
    def tau(self):
        return self.mixing.tau if self.mixing is not None else 1

    def params_at(self, k):
        if self.schedule is None:
            return self.zeta, self.eta
        return self.schedule(k)

    def g_operator(self, k):
        zeta, eta = self.params_at(k)
        key = (zeta, eta)
        op = self._ops.get(key)
        if op is None:
            if self.mixing is None:
                raise ConfigurationError("configuration is not bound to a gossip matrix")
            op = GOperator(zeta, eta, self.mixing)
            self._ops[key] = op
        return op

    def rounds_per_iteration(self, k=0):
        """z exchange + oracle rounds (skipped when eta = 0) + x exchange."""
        _, eta = self.params_at(k)
        return 2 + (self.tau if eta > 0 else 0)


@dataclass(frozen=True, eq=False)
class AlgoState:
    x: np.ndarray
    q: np.ndarray
    z: np.ndarray
    k: int = 0
    rounds: int = 0


def init_state(problem, config, x0=None, q0=None):
    shape = (problem.n_nodes, problem.dim)
    x = np.zeros(shape) if x0 is None else np.array(x0, dtype=float).reshape(shape)
    if q0 is None:
        q = np.zeros(shape)
    else:
        q = np.array(q0, dtype=float).reshape(shape)
        if np.max(np.abs(q.sum(axis=0))) > DUAL_INIT_TOL:
            raise ConfigurationError("initial dual must satisfy sum_i q_i = 0")
    return AlgoState(x, q, np.zeros(shape), 0, 0)


def step(state, problem, config, k=None):
    k = state.k if k is None else k
    W = config.P.matrix
    x, q = state.x, state.q
    counter = RoundCounter(state.rounds)
    z = problem.grads(x) + config.theta * q + config.rho * (W @ x)
    counter.add(1)
    x_new = x - apply_G(config.g_operator(k), z, counter)
    counter.add(1)
    q_new = q + (config.rho * config.alpha_bar) * (W @ x_new)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(q_new))):
        raise DivergenceError(f"non-finite iterate at k={k + 1}", iteration=k + 1)
    if np.linalg.norm(x_new) > DIVERGENCE_NORM:
        raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_NORM:g} at k={k + 1}", k + 1)
    return AlgoState(x_new, q_new, z, k + 1, counter.rounds)


@dataclass
class Trajectory:
    records: list
    final: AlgoState
    config: AlgoConfig
    constants: "LemmaConstants" = None
    stopped_early: bool = False
    states: list = None


def run(problem, config, T, x0=None, q0=None, callbacks=(), diagnostics=None,
        stop_gap=None, round_budget=None, keep_states=False, constants=None):
    """Run ``T`` iterations, recording diagnostics for every visited state.

    Records cover ``k = 0..T`` (or up to the first state whose optimality gap
    is at most ``stop_gap``, or the last state within ``round_budget``).
    ``callbacks`` are called as ``cb(state, record)``.
    """
    from mappro.metrics import Diagnostics

    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if diagnostics is None:
        diagnostics = Diagnostics(problem, config, constants=constants)
    state = init_state(problem, config, x0, q0)
    records = []
    states = [state] if keep_states else None
    stopped = False
    for k in range(T + 1):
        rec = diagnostics.record(state)
        records.append(rec)
        for cb in callbacks:
            cb(state, rec)
        if stop_gap is not None and rec.opt_gap <= stop_gap:
            stopped = k < T
            break
        if k == T:
            break
        if round_budget is not None and state.rounds + config.rounds_per_iteration(k) > round_budget:
            stopped = True
            break
        state = step(state, problem, config, k)
        if keep_states:
            states.append(state)
    return Trajectory(records, state, config, constants or diagnostics.constants, stopped, states)


def l_admm_config(gamma, alpha, beta, P):
    """Linearized ADMM as MAP-Pro with ``G = I/gamma``, ``rho = alpha``, ``theta = beta``,
    ``H = P`` and ``H~ = beta/(alpha gamma) P``."""
    for name, v in (("gamma", gamma), ("alpha", alpha), ("beta", beta)):
        if not v > 0:
            raise ConfigurationError(f"{name} must be positive")
    return AlgoConfig(
        rho=alpha, theta=beta, zeta=1.0 / gamma, eta=0.0,
        alpha_bar=beta / (alpha * gamma), mixing=Explicit(1).bind(P), name="l_admm",
    )


@dataclass(frozen=True)
class LemmaConstants:
    """Descent-lemma and rate-theorem constants for one parameter set."""

    M_bar: float
    lam_H_min: float
    lam_H_max: float
    rho: float
    theta: float
    zeta: float
    eta: float
    alpha_bar: float
    lam_hat_G: float
    lam_min_G: float
    lam_D_max: float
    lam_D_min: float
    kappa1: float
    kappa2: float
    eps1: float
    eps2: float
    eps3: float
    eps4: float
    eps5: float
    eps6: float
    eps7: float
    eps8: float
    eps9: float
    eps10: float
    xi1: float
    xi2: float
    xi3: float
    delta1: float
    delta2: float
    delta3: float
    n_nodes: int = None
    nu: float = None
    delta4: float = None
    delta: float = None
    lam_hat_G_bounds: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)

    @property
    def x_weight(self):
        """``lam_hat (eps3 - eps4 lam_hat)``: the consensus-error descent weight."""
        return self.lam_hat_G * (self.eps3 - self.eps4 * self.lam_hat_G)

    @property
    def s_weight(self):
        return self.lam_hat_G * (self.eps5 - self.eps6 * self.lam_hat_G)

    @property
    def gbar_weight(self):
        return self.zeta * (self.eps7 - self.eps10 * self.zeta)

    @property
    def vtilde_shift(self):
        """Coefficient of ``||x||_K^2`` subtracted from V to form V-tilde."""
        return self.lam_hat_G * (self.eps1 + self.eps2 * self.lam_hat_G)

    def conditions(self):
        """Every sufficient condition of the rate theorems as ``name -> (holds, lhs, rhs)``."""
        k1, k2, M = self.kappa1, self.kappa2, self.M_bar
        rho_bound = (1 + M**2 + self.theta / (8 * k1)) / (
            self.lam_H_max / (2 * k1 * k2) - self.lam_H_max * self.lam_D_max
        ) if self.lam_D_max < 1 / (2 * k1 * k2) else math.inf
        zeta_cap = self.theta * self.lam_hat_G / (4 * k1 * M**2) if M > 0 else math.inf
        out = {
            "lam_D_max < 1/(2 kappa1 kappa2)": (self.lam_D_max < 1 / (2 * k1 * k2), self.lam_D_max, 1 / (2 * k1 * k2)),
            "0 < lam_D_min <= lam_D_max": (0 < self.lam_D_min <= self.lam_D_max * (1 + 1e-12), self.lam_D_min, self.lam_D_max),
            "theta > max(4 kappa1 M^2, 1)": (self.theta > max(4 * k1 * M**2, 1.0), self.theta, max(4 * k1 * M**2, 1.0)),
            "rho > descent bound": (self.rho > rho_bound, self.rho, rho_bound),
            "rho > theta/lam_H_min": (self.rho > self.theta / self.lam_H_min, self.rho, self.theta / self.lam_H_min),
            "eps3 > 0": (self.eps3 > 0, self.eps3, 0.0),
            "eps5 > 0": (self.eps5 > 0, self.eps5, 0.0),
        }
        for name, bound in self.lam_hat_G_bounds.items():
            out[f"lam_hat_G < {name}"] = (self.lam_hat_G < bound, self.lam_hat_G, bound)
        out["zeta >= lam_hat_G"] = (self.zeta >= self.lam_hat_G * (1 - 1e-12), self.zeta, self.lam_hat_G)
        out["zeta < eps7/eps10"] = (self.zeta < self.eps7 / self.eps10 if self.eps10 > 0 else True,
                                    self.zeta, self.eps7 / self.eps10 if self.eps10 > 0 else math.inf)
        out["zeta < theta lam_hat_G/(4 kappa1 M^2)"] = (self.zeta < zeta_cap, self.zeta, zeta_cap)
        out["xi2 > 0"] = (self.xi2 > 0, self.xi2, 0.0)
        out["xi1 xi2 > 1/4"] = (self.xi1 * self.xi2 > 0.25, self.xi1 * self.xi2, 0.25)
        out["delta2 > 0"] = (self.delta2 > 0, self.delta2, 0.0)
        out["delta3 > 0"] = (self.delta3 > 0, self.delta3, 0.0)
        if self.delta is not None:
            out["0 < delta < 1"] = (0 < self.delta < 1, self.delta, 1.0)
        return out

    def failed_conditions(self):
        return [name for name, (ok, _, _) in self.conditions().items() if not ok]

    @property
    def valid(self):
        return not self.failed_conditions()


def lemma_constants(M_bar, bounds, rho, theta, zeta, eta, lam_hat_G, lam_min_G, alpha_bar,
                    nu=None, n_nodes=None):
    """Evaluate every constant of the descent lemma and both rate theorems.

    ``H~ = alpha_bar H`` fixes the D~ spectrum as ``alpha_bar / lambda_j(G)``.
    """
    lmin, lmax = bounds.lambda_min_pos, bounds.lambda_max
    k2 = bounds.kappa2
    k1 = lam_hat_G / lam_min_G
    M2 = M_bar**2
    d_max = alpha_bar / lam_min_G
    d_min = alpha_bar / lam_hat_G
    lam = lam_hat_G

    eps1 = rho * lmax * (1 / (2 * k1 * k2) + d_max)
    eps2 = rho * (theta + rho * lmax) * d_max * lmax
    eps3 = rho * lmax * (1 / (2 * k1 * k2) - d_max) - (1 + M2 + theta / (8 * k1))
    eps4 = (4.5 * rho**2 * lmax**2 + rho * d_max * lmax + 0.25
            + rho**2 * d_max * lmax**2 + (3 + 1.5 * rho * lmax) * M2 + eps2)
    eps5 = (theta - 1) / (2 * k1)
    eps6 = 3.5 * theta**2 + 0.5 * (3 * theta**2 + rho**2 * lmax**2)
    eps7 = 0.25
    eps8 = M_bar / 2 + M2 / (theta * d_min) * (1 / (rho * lmin) + 1 / theta)
    eps9 = (M2 / (theta * d_min) * (1 / (rho**2 * lmin**2) + 1 / theta**2)
            + M2 / (2 * theta**2 * rho * lmin))
    eps10 = eps8 + eps9 / lam_min_G
    xi1 = 0.5 * (theta / (rho * lmax) + 1)
    xi2 = 0.5 - eps1 * lam - eps2 * lam**2
    a = xi2 - xi1
    xi3 = 0.5 * (a + math.sqrt(a * a + 1))

    lam_bounds = _lam_hat_bounds(eps1, eps2, eps3, eps4, eps5, eps6, eps7, eps8, eps9, k1, xi1)

    x_w = lam * (eps3 - eps4 * lam)
    s_w = lam * (eps5 - eps6 * lam)
    g_w = zeta * (eps7 - eps10 * zeta)
    delta1 = 0.5 + xi1
    delta2 = min(x_w, s_w, g_w, zeta / 4)
    delta3 = xi2 - xi3
    delta4 = delta = None
    if nu is not None:
        # ||L g0||^2 = ||grad f(xbar)||^2 / N, so the P-L term carries 1/N.
        n = 1 if n_nodes is None else n_nodes
        delta4 = min(x_w, s_w, nu * zeta / (2 * n))
        delta = delta4 / delta1
    return LemmaConstants(
        M_bar=M_bar, lam_H_min=lmin, lam_H_max=lmax, rho=rho, theta=theta, zeta=zeta, eta=eta,
        alpha_bar=alpha_bar, lam_hat_G=lam_hat_G, lam_min_G=lam_min_G, lam_D_max=d_max,
        lam_D_min=d_min, kappa1=k1, kappa2=k2, eps1=eps1, eps2=eps2, eps3=eps3, eps4=eps4,
        eps5=eps5, eps6=eps6, eps7=eps7, eps8=eps8, eps9=eps9, eps10=eps10, xi1=xi1, xi2=xi2,
        xi3=xi3, delta1=delta1, delta2=delta2, delta3=delta3, n_nodes=n_nodes, nu=nu,
        delta4=delta4, delta=delta, lam_hat_G_bounds=lam_bounds,
    )


def _lam_hat_bounds(eps1, eps2, eps3, eps4, eps5, eps6, eps7, eps8, eps9, k1, xi1):
    def root(c):
        # positive root of eps2 t^2 + eps1 t - c/2 = 0
        if eps2 == 0:
            return c / (2 * eps1) if eps1 > 0 else math.inf
        return (math.sqrt(eps1**2 + 2 * eps2 * c) - eps1) / (2 * eps2)

    out = {
        "eps3/eps4": eps3 / eps4,
        "eps5/eps6": eps5 / eps6,
        "(eps7 - eps9 kappa1)/eps8": (eps7 - eps9 * k1) / eps8 if eps8 > 0 else math.inf,
        "xi2 > 0 root": root(1.0),
        "xi1 xi2 > 1/4 root": root(1.0 - 0.5 / xi1),
    }
    if eps2 > 0 and eps1**2 + 2 - 1 / xi1 >= 0:
        out["printed xi1 root"] = (math.sqrt(eps1**2 + 2 - 1 / xi1) - eps1) / (2 * eps2)
    return out


def select_parameters(M_bar, bounds, kappa1_target=1.0, poly_range=None, mixing=None,
                      nu=None, n_nodes=None, safety=2.0, max_theta_doublings=60):
    """Theory-mode parameters, in the order lam_D, theta, rho, lam_hat_G, zeta, eta, alpha_bar.

    Open intervals are resolved by midpoints and one-sided bounds by
    ``safety`` times the bound. ``zeta`` is tied to ``lam_hat_G`` by the
    ratio the mixing polynomial imposes once ``eta`` realizes
    ``kappa1_target``. Returns ``(AlgoConfig, LemmaConstants)``; the config
    carries ``mixing`` when one is given.
    """
    if mixing is not None:
        if poly_range is None:
            poly_range = polynomial_spectral_range(mixing)
        if n_nodes is None:
            n_nodes = mixing.P.dim
    if poly_range is None:
        poly_range = (bounds.lambda_min_pos, bounds.lambda_max)
    if kappa1_target < 1:
        raise ConfigurationError("kappa1 target must be >= 1")
    if M_bar < 0:
        raise ConfigurationError("M_bar must be non-negative")
    lo, hi = poly_range
    k1, k2 = float(kappa1_target), bounds.kappa2
    lmin, lmax = bounds.lambda_min_pos, bounds.lambda_max

    if k1 == 1:
        ratio = 1.0
    else:
        if hi - lo <= 1e-12 * hi:
            raise InfeasibleParameters(
                f"kappa1 = {k1} is unattainable: the mixing polynomial is constant on the "
                "active spectrum (its eigengap is 1); use kappa1 = 1",
                bound="kappa1 attainable",
            )
        ratio = k1 * (hi - lo) / (k1 * hi - lo)

    d_max = 0.5 / (2 * k1 * k2)
    d_min = d_max / k1
    M2 = M_bar**2
    theta = safety * max(4 * k1 * M2 / ratio, 1.0)
    for _ in range(max_theta_doublings):
        rho = safety * max(
            (1 + M2 + theta / (8 * k1)) / (lmax / (2 * k1 * k2) - lmax * d_max),
            theta / lmin,
        )
        eps9 = (M2 / (theta * d_min) * (1 / (rho**2 * lmin**2) + 1 / theta**2)
                + M2 / (2 * theta**2 * rho * lmin))
        if ratio * 0.25 - k1 * eps9 > 0:
            break
        theta *= 2
    else:
        raise InfeasibleParameters(
            "no theta makes eps7 - eps9 kappa1 positive", bound="(eps7 - eps9 kappa1)/eps8"
        )

    # provisional pass with lam_hat-independent constants to get the lam_hat bounds
    probe = lemma_constants(M_bar, bounds, rho, theta, 1.0, 0.0, 1.0, 1.0 / k1, d_max / k1,
                            nu=nu, n_nodes=n_nodes)
    # probe has lam_min_G = 1/k1 so d_max matches; eps1..eps9 do not depend on lam_hat
    caps = dict(probe.lam_hat_G_bounds)
    caps["zeta < eps7/eps10"] = (
        (ratio * probe.eps7 - k1 * probe.eps9) / probe.eps8 if probe.eps8 > 0 else math.inf
    )
    for name, cap in caps.items():
        if not cap > 0:
            raise InfeasibleParameters(f"empty interval for lam_hat_G: {name} = {cap:.6g}", bound=name)
    cap = min(caps.values())
    if not math.isfinite(cap):
        raise InfeasibleParameters("lam_hat_G is unbounded; check inputs", bound="lam_hat_G")
    lam_hat = cap / 2
    zeta = lam_hat / ratio
    lam_min_G = lam_hat / k1
    eta = compute_eta(zeta, k1, poly_range)
    alpha_bar = d_max * lam_min_G

    consts = lemma_constants(M_bar, bounds, rho, theta, zeta, eta, lam_hat, lam_min_G,
                             alpha_bar, nu=nu, n_nodes=n_nodes)
    failed = consts.failed_conditions()
    if failed:
        raise InfeasibleParameters(f"parameter chain violates: {', '.join(failed)}", bound=failed[0])
    cfg = AlgoConfig(rho=rho, theta=theta, zeta=zeta, eta=eta, alpha_bar=alpha_bar,
                     mixing=mixing, mode="theory",
                     name="map_pro_ca" if mixing is not None and mixing.c1 is not None else "map_pro")
    return cfg, consts


def constants_for_config(problem, config, bounds=None):
    """Derived constants evaluated at an arbitrary (for instance hand-tuned) configuration."""
    from mappro.graph import spectral_bounds

    bounds = bounds or spectral_bounds(config.P)
    op = config.g_operator(0)
    return lemma_constants(
        problem.M_bar, bounds, config.rho, config.theta, op.zeta, op.eta, op.lambda_hat,
        op.lambda_min, config.alpha_bar, nu=problem.nu, n_nodes=problem.n_nodes,
    )


def with_mixing(config, mixing):
    return replace(config, mixing=mixing, _ops={})
