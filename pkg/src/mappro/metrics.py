"""Per-iteration diagnostics and numerical checks of the descent and rate inequalities.

Notation on stacked ``(N, d)`` arrays: ``K`` removes the node average,
``L`` broadcasts it; ``s = q + grad f~(xbar)/theta``; ``gbar = L grad f~(x)``
and ``gbar0 = L grad f~(xbar)``.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from mappro.errors import UnsupportedDiagnostic

CSV_COLUMNS = ("k", "rounds", "opt_gap", "consensus_err", "W", "V", "Vtilde", "Vhat", "fgap", "s_norm")


@dataclass(frozen=True)
class DiagnosticsRecord:
    k: int
    rounds: int
    opt_gap: float
    consensus_err: float
    W: float
    s_norm: float
    gbar_sq: float
    gbar0_sq: float
    dual_residual: float
    V: float = None
    Vtilde: float = None
    Vhat: float = None
    fgap: float = None

    def csv_row(self):
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _sq(a):
    return float(np.vdot(a, a))


def _psd_form(x, W):
    """``x^T W x`` for PSD ``W``, clipped at zero against rounding."""
    return max(float(np.vdot(x, W @ x)), 0.0)


def _center(a):
    return a - a.mean(axis=0)


def optimality_gap(x, problem, H):
    """Stationarity gap ``||sum_i grad f_i(x_i)||^2 + x^T H x``.

    The gradient term aggregates the local gradients, so the gap vanishes
    exactly at consensual stationary points.
    """
    W = getattr(H, "matrix", H)
    g = problem.grads(x)
    return _sq(g.sum(axis=0)) + _psd_form(x, W)


def w_metric(state, problem, config):
    """Stationarity measure ``||x - xbar||^2 + ||s||_K^2 + ||gbar||^2 + ||gbar0||^2``."""
    x, q = state.x, state.q
    n = problem.n_nodes
    xbar = x.mean(axis=0)
    g = problem.grads(x)
    g0 = problem.grads(np.broadcast_to(xbar, x.shape))
    s = q + g0 / config.theta
    return (_sq(_center(x)) + _sq(_center(s))
            + n * _sq(g.mean(axis=0)) + n * _sq(g0.mean(axis=0)))


class Diagnostics:
    """Evaluates :class:`DiagnosticsRecord` for states of one run.

    ``V``, ``Vtilde`` and ``Vhat`` need ``f*`` and are computed only when
    ``lyapunov`` is true (default: whenever ``f*`` is known and constants
    are supplied). ``H^+`` is formed once from the eigendecomposition.
    """

    def __init__(self, problem, config, constants=None, lyapunov=None):
        self.problem = problem
        self.config = config
        self.constants = constants
        self.W = config.P.matrix
        if lyapunov is None:
            lyapunov = problem.f_star is not None
        self.lyapunov = lyapunov
        self.H_pinv = None
        if lyapunov:
            if problem.f_star is None:
                raise UnsupportedDiagnostic("Lyapunov diagnostics need a known optimal value f*")
            self.H_pinv = pinv_psd(self.W)

    def record(self, state):
        p, cfg = self.problem, self.config
        x, q = state.x, state.q
        n = p.n_nodes
        xbar = x.mean(axis=0)
        g = p.grads(x)
        g0 = p.grads(np.broadcast_to(xbar, x.shape))
        kx = _center(x)
        s = q + g0 / cfg.theta
        ks = _center(s)
        cons = _sq(kx)
        s_norm = _sq(ks)
        gbar_sq = n * _sq(g.mean(axis=0))
        gbar0_sq = n * _sq(g0.mean(axis=0))
        opt_gap = _sq(g.sum(axis=0)) + _psd_form(x, self.W)
        extra = {}
        if p.f_star is not None:
            extra["fgap"] = p.f(xbar) - p.f_star
        if self.lyapunov:
            fgap = extra["fgap"]
            V = (0.5 * cons
                 + 0.5 * (cfg.theta / cfg.rho) * float(np.vdot(s, self.H_pinv @ s))
                 + 0.5 * s_norm + float(np.vdot(kx, ks)) + fgap)
            extra["V"] = V
            extra["Vhat"] = cons + s_norm + fgap
            if self.constants is not None:
                extra["Vtilde"] = V - self.constants.vtilde_shift * cons
        return DiagnosticsRecord(
            k=state.k, rounds=state.rounds, opt_gap=opt_gap, consensus_err=cons,
            W=cons + s_norm + gbar_sq + gbar0_sq, s_norm=s_norm, gbar_sq=gbar_sq,
            gbar0_sq=gbar0_sq, dual_residual=float(np.max(np.abs(q.sum(axis=0)))), **extra,
        )


def pinv_psd(W):
    w, U = np.linalg.eigh(W)
    tol = 1e-9 * np.abs(w).max()
    inv = np.where(w > tol, 1.0 / np.where(w > tol, w, 1.0), 0.0)
    return (U * inv) @ U.T


def lyapunov_V(state, problem, config, k=None, H_pinv=None):
    """``V = 1/2||x||_K^2 + 1/2||s||^2_{(theta/rho) H^+ + K} + <x, K s> + f(xbar) - f*``."""
    if problem.f_star is None:
        raise UnsupportedDiagnostic("V needs a known optimal value f*")
    W = config.P.matrix
    Hp = pinv_psd(W) if H_pinv is None else H_pinv
    x, q = state.x, state.q
    xbar = x.mean(axis=0)
    g0 = problem.grads(np.broadcast_to(xbar, x.shape))
    s = q + g0 / config.theta
    kx, ks = _center(x), _center(s)
    return (0.5 * _sq(kx) + 0.5 * (config.theta / config.rho) * float(np.vdot(s, Hp @ s))
            + 0.5 * _sq(ks) + float(np.vdot(kx, ks)) + problem.f(xbar) - problem.f_star)


@dataclass
class CheckReport:
    name: str
    checked: int = 0
    violations: list = field(default_factory=list)
    notices: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    @property
    def first_violation(self):
        return self.violations[0] if self.violations else None

    def summary(self):
        if self.ok:
            base = f"{self.name}: ok ({self.checked} checks)"
        else:
            k, lhs, rhs = self.first_violation
            base = (f"{self.name}: {len(self.violations)} violations of {self.checked}, "
                    f"first at k={k} (lhs={lhs:.6g}, rhs={rhs:.6g})")
        return "; ".join([base] + self.notices)


def _slack(v):
    return 1e-9 * (1 + abs(v))


def check_descent(records, constants):
    """``Vtilde[k+1] - Vtilde[k] <= -delta2 W[k]`` with slack ``1e-9 (1 + |Vtilde[k]|)``."""
    rep = CheckReport("descent")
    if not records or records[0].Vtilde is None:
        rep.notices.append("skipped: Vtilde unavailable (needs f* and constants)")
        return rep
    for a, b in zip(records, records[1:]):
        lhs = b.Vtilde - a.Vtilde
        rhs = -constants.delta2 * a.W
        rep.checked += 1
        if lhs > rhs + _slack(a.Vtilde):
            rep.violations.append((a.k, lhs, rhs))
    return rep


def check_sandwich(records, constants):
    """``delta3 Vhat <= Vtilde <= delta1 Vhat`` at every record."""
    rep = CheckReport("sandwich")
    if not records or records[0].Vtilde is None:
        rep.notices.append("skipped: Vtilde unavailable")
        return rep
    for r in records:
        rep.checked += 1
        lo = constants.delta3 * r.Vhat
        hi = constants.delta1 * r.Vhat
        tol = 1e-9 * (1 + abs(r.Vhat))
        if r.Vtilde < lo - tol:
            rep.violations.append((r.k, r.Vtilde, lo))
        elif r.Vtilde > hi + tol:
            rep.violations.append((r.k, r.Vtilde, hi))
    return rep


def check_rates(records, constants):
    """Sublinear running-average bound, function-gap bound and (with nu) the linear envelope.

    Returns a dict of :class:`CheckReport` keyed ``"average"``, ``"fgap"``,
    ``"linear"``.
    """
    out = {"average": CheckReport("running-average W bound"),
           "fgap": CheckReport("function-gap bound"),
           "linear": CheckReport("linear envelope")}
    if not records or records[0].Vhat is None:
        for rep in out.values():
            rep.notices.append("skipped: needs f* (Vhat unavailable)")
        return out
    c = constants
    v0 = records[0].Vhat
    total = 0.0
    bound = c.delta1 * v0 / c.delta2
    for T, r in enumerate(records):
        total += r.W
        lhs = total / (T + 1)
        rhs = bound / (T + 1)
        out["average"].checked += 1
        if lhs > rhs * (1 + 1e-9) + 1e-12:
            out["average"].violations.append((r.k, lhs, rhs))
    for r in records[1:]:
        out["fgap"].checked += 1
        rhs = c.delta1 * v0
        if r.fgap > rhs + _slack(rhs):
            out["fgap"].violations.append((r.k, r.fgap, rhs))
    if c.delta is None:
        out["linear"].notices.append("skipped: problem has no P-L constant")
        return out
    factor = c.delta1 / c.delta3 * v0
    log1m = math.log1p(-c.delta)
    for r in records:
        lhs = r.consensus_err + r.fgap
        rhs = math.exp(r.k * log1m) * factor
        out["linear"].checked += 1
        if lhs > rhs * (1 + 1e-9) + 1e-300:
            out["linear"].violations.append((r.k, lhs, rhs))
    return out


def fitted_decay_ratio(values, tail=0.5):
    """Per-iteration ratio from a least-squares line through ``log(values)`` over the tail."""
    v = np.asarray(values, dtype=float)
    start = int(len(v) * (1 - tail))
    ks = np.arange(start, len(v))
    ys = np.log(v[start:])
    slope = np.polyfit(ks, ys, 1)[0]
    return float(math.exp(slope))


def write_csv(records, path):
    """Write the trajectory CSV atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow(r.csv_row())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def record_fields():
    return [f.name for f in fields(DiagnosticsRecord)]
