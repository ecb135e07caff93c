import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mappro.algorithm import AlgoState, init_state, run, select_parameters, step
from mappro.errors import UnsupportedDiagnostic
from mappro.graph import spectral_bounds
from mappro.metrics import (
    CSV_COLUMNS,
    CheckReport,
    Diagnostics,
    DiagnosticsRecord,
    check_descent,
    check_rates,
    fitted_decay_ratio,
    lyapunov_V,
    optimality_gap,
    read_csv,
    w_metric,
    write_csv,
)
from mappro.mixing import Chebyshev, Explicit


@pytest.fixture(scope="module")
def theory_run(pl_instance):
    problem, P = pl_instance
    cfg, consts = select_parameters(problem.M_bar, spectral_bounds(P), 1.5,
                                    mixing=Chebyshev(3).bind(P), nu=problem.nu,
                                    n_nodes=problem.n_nodes)
    x0 = np.random.default_rng(3).standard_normal((problem.n_nodes, problem.dim))
    return problem, cfg, consts, run(problem, cfg, 30, x0=x0, constants=consts, keep_states=True)


def dense_reference(state, problem, cfg, consts):
    """Every quantity built from explicit (Nd x Nd) matrices."""
    n, d = problem.n_nodes, problem.dim
    one = np.ones((n, 1))
    L = np.kron(one @ one.T / n, np.eye(d))
    K = np.eye(n * d) - L
    H = np.kron(cfg.P.matrix, np.eye(d))
    Hp = np.linalg.pinv(H, hermitian=True, rcond=1e-10)
    x = state.x.reshape(-1)
    q = state.q.reshape(-1)
    xbar = np.tile(state.x.mean(0), n)
    g = problem.grads(state.x).reshape(-1)
    g0 = problem.grads(xbar.reshape(n, d)).reshape(-1)
    s = q + g0 / cfg.theta
    fgap = problem.f(state.x.mean(0)) - problem.f_star
    V = (0.5 * x @ K @ x + 0.5 * s @ ((cfg.theta / cfg.rho) * Hp + K) @ s + x @ K @ s + fgap)
    Kx, Ks, Lg, Lg0 = K @ x, K @ s, L @ g, L @ g0
    grad_sum = g.reshape(n, d).sum(0)
    return {
        "opt_gap": grad_sum @ grad_sum + x @ H @ x,
        "consensus_err": x @ K @ x,
        "s_norm": s @ K @ s,
        "W": Kx @ Kx + Ks @ Ks + Lg @ Lg + Lg0 @ Lg0,
        "V": V,
        "Vtilde": V - consts.lam_hat_G * (consts.eps1 + consts.eps2 * consts.lam_hat_G) * (x @ K @ x),
        "Vhat": x @ K @ x + s @ K @ s + fgap,
        "fgap": fgap,
    }


def test_diagnostics_match_dense_reference(theory_run):
    problem, cfg, consts, traj = theory_run
    for state, rec in zip(traj.states, traj.records):
        ref = dense_reference(state, problem, cfg, consts)
        for key, val in ref.items():
            assert getattr(rec, key) == pytest.approx(val, rel=1e-10, abs=1e-10), key
        assert w_metric(state, problem, cfg) == pytest.approx(ref["W"], rel=1e-10)
        assert lyapunov_V(state, problem, cfg) == pytest.approx(ref["V"], rel=1e-10)


def test_smoothness_transfer(theory_run):
    problem, cfg, _, traj = theory_run
    for state in traj.states:
        g = problem.grads(state.x)
        g0 = problem.grads(np.broadcast_to(state.x.mean(0), state.x.shape))
        kx = state.x - state.x.mean(0)
        assert np.sum((g0 - g) ** 2) <= problem.M_bar**2 * np.sum(kx**2) * (1 + 1e-12) + 1e-15


def test_gap_zero_at_consensual_stationary_point(pl_instance):
    problem, P = pl_instance
    X = np.tile(problem.info["x_star"], (problem.n_nodes, 1))
    assert optimality_gap(X, problem, P) <= 1e-12


@given(seed=st.integers(0, 10**6), eps=st.floats(1e-4, 1.0))
@settings(max_examples=40, deadline=None)
def test_gap_positive_off_stationarity(pl_instance, seed, eps):
    problem, P = pl_instance
    X = np.tile(problem.info["x_star"], (problem.n_nodes, 1))
    D = eps * np.random.default_rng(seed).standard_normal(X.shape)
    gap = optimality_gap(X + D, problem, P)
    assert gap > 0
    # the consensus term alone is a lower bound
    assert gap >= float(np.vdot(D, P.matrix @ D)) * (1 - 1e-12)


def test_lyapunov_needs_f_star(benchmark):
    problem, P = benchmark
    from mappro.algorithm import AlgoConfig

    cfg = AlgoConfig(rho=0.1, theta=1, zeta=1, eta=0, alpha_bar=1, mixing=Explicit(1).bind(P))
    with pytest.raises(UnsupportedDiagnostic):
        Diagnostics(problem, cfg, lyapunov=True)
    rec = Diagnostics(problem, cfg).record(init_state(problem, cfg))
    assert rec.V is None and rec.fgap is None
    with pytest.raises(UnsupportedDiagnostic):
        lyapunov_V(init_state(problem, cfg), problem, cfg)


def test_rates_skip_without_f_star(benchmark):
    problem, P = benchmark
    from mappro.algorithm import AlgoConfig

    cfg = AlgoConfig(rho=0.1, theta=1, zeta=1, eta=0, alpha_bar=1, mixing=Explicit(1).bind(P))
    recs = run(problem, cfg, 3).records
    reports = check_rates(recs, None)
    assert all(r.ok and r.notices for r in reports.values())
    assert check_descent(recs, None).notices


def _rec(k, vt, w):
    return DiagnosticsRecord(k=k, rounds=0, opt_gap=0.0, consensus_err=0.0, W=w, s_norm=0.0,
                             gbar_sq=0.0, gbar0_sq=0.0, dual_residual=0.0, Vtilde=vt)


def test_descent_check_synthetic():
    class C:
        delta2 = 0.5

    good = [_rec(0, 10.0, 2.0), _rec(1, 9.0, 2.0), _rec(2, 7.9, 1.0)]
    assert check_descent(good, C).ok
    bad = good + [_rec(3, 7.8, 1.0)]
    rep = check_descent(bad, C)
    assert not rep.ok and rep.first_violation[0] == 2
    assert "first at k=2" in rep.summary()


def test_check_report_summary():
    rep = CheckReport("x", checked=3)
    assert rep.summary() == "x: ok (3 checks)"


def test_fitted_decay_ratio():
    vals = 3.0 * 0.9 ** np.arange(100)
    assert fitted_decay_ratio(vals) == pytest.approx(0.9, rel=1e-12)


def test_csv_format_and_roundtrip(tmp_path, theory_run):
    *_, traj = theory_run
    path = tmp_path / "t.csv"
    write_csv(traj.records, path)
    rows = read_csv(path)
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert len(rows) == len(traj.records)
    for row, rec in zip(rows, traj.records):
        assert int(row["k"]) == rec.k
        assert float(row["opt_gap"]) == rec.opt_gap
        assert float(row["Vtilde"]) == rec.Vtilde
    assert list(tmp_path.iterdir()) == [path]


def test_csv_empty_fields(tmp_path):
    path = tmp_path / "t.csv"
    write_csv([_rec(0, None, 1.0 / 3.0)], path)
    with open(path) as fh:
        header, row = list(csv.reader(fh))
    fields = dict(zip(header, row))
    assert fields["V"] == "" and fields["fgap"] == ""
    assert fields["W"] == "0.33333333333333331"


def test_csv_write_is_atomic(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("old\n")

    class Boom:
        k = 0

        def csv_row(self):
            raise RuntimeError("fail mid-write")

    with pytest.raises(RuntimeError):
        write_csv([_rec(0, 1.0, 1.0), Boom()], path)
    assert path.read_text() == "old\n"
    assert list(tmp_path.iterdir()) == [path]


def test_record_at_state(theory_run):
    problem, cfg, consts, traj = theory_run
    d = Diagnostics(problem, cfg, constants=consts)
    s = traj.states[5]
    rec = d.record(AlgoState(s.x, s.q, s.z, s.k, s.rounds))
    assert rec == traj.records[5]
    assert math.isclose(rec.dual_residual, 0.0, abs_tol=1e-12)
    nxt = step(s, problem, cfg)
    assert nxt.k == 6
