"""Experiment runner: ``run``, ``compare`` and ``constants`` subcommands.

Experiments are described by INI files with the sections ``graph``,
``problem``, ``algorithm``, ``run`` and ``output``::

    [graph]
    nodes = 20
    edges = 26
    seed = 0

    [problem]
    kind = benchmark
    dim = 5
    samples = 200
    seed = 0

    [algorithm]
    name = map_pro_ca
    tau = 3
    mode = tuned
    rho = 0.0115
    zeta = 2.09
    eta = 0.133
    alpha_bar = 14.57

    [run]
    iterations = 500
    stop_gap = 1e-6

    [output]
    dir = out/map_pro_ca

Relative paths are resolved against the directory of the config file.
Exit codes: 0 success, 2 bad config, 3 infeasible parameters, 4 divergence.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from mappro.algorithm import (
    AlgoConfig,
    constants_for_config,
    l_admm_config,
    run,
    select_parameters,
)
from mappro.errors import (
    ComparabilityError,
    ConfigurationError,
    DivergenceError,
    InfeasibleParameters,
    MapProError,
)
from mappro.graph import Network, laplacian, random_connected_graph, spectral_bounds
from mappro.metrics import check_descent, check_rates, check_sandwich, write_csv
from mappro.mixing import Chebyshev, Explicit, polynomial_spectral_range
from mappro.problems import (
    LogisticNonconvexData,
    generate_benchmark_data,
    logistic_nonconvex,
    pl_quadratic,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 2, 3, 4

ALGORITHMS = ("map_pro", "map_pro_ca", "l_admm")
PROBLEMS = ("benchmark", "pl_quadratic")

_KEYS = {
    "graph": {"nodes", "edges", "seed", "edge_list", "weighting"},
    "problem": {"kind", "dim", "samples", "lam", "mu", "seed", "data", "rank", "rows", "b"},
    "algorithm": {"name", "label", "mode", "tau", "coefficients", "kappa1", "safety",
                  "rho", "theta", "zeta", "eta", "eta_fraction", "alpha_bar",
                  "gamma", "alpha", "beta"},
    "run": {"iterations", "stop_gap", "round_budget", "lyapunov"},
    "output": {"dir", "csv", "summary", "constants", "plot"},
}


@dataclass
class ExperimentConfig:
    """Parsed and normalized experiment description."""

    path: Path
    graph: dict
    problem: dict
    algorithm: dict
    run: dict
    output: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.algorithm.get("label") or self.algorithm["name"]

    def instance_key(self):
        """Everything that determines the graph and the problem instance."""
        return (tuple(sorted(self.graph.items())), tuple(sorted(self.problem.items())))


class _Section:
    def __init__(self, parser, name, base):
        self.name = name
        self.base = base
        self.raw = dict(parser[name]) if parser.has_section(name) else {}
        unknown = set(self.raw) - _KEYS[name]
        if unknown:
            raise ConfigurationError(f"[{name}] has unknown keys: {', '.join(sorted(unknown))}")

    def has(self, key):
        return self.raw.get(key, "").strip() != ""

    def _get(self, key, conv, default, required):
        if not self.has(key):
            if required:
                raise ConfigurationError(f"[{self.name}] missing required key {key!r}")
            return default
        try:
            return conv(self.raw[key].strip())
        except ValueError as exc:
            raise ConfigurationError(f"[{self.name}] {key}: {exc}") from None

    def int(self, key, default=None, required=False):
        return self._get(key, int, default, required)

    def float(self, key, default=None, required=False):
        return self._get(key, float, default, required)

    def str(self, key, default=None, required=False):
        return self._get(key, str, default, required)

    def path(self, key, must_exist=True):
        if not self.has(key):
            return None
        p = Path(self.raw[key].strip())
        p = (p if p.is_absolute() else self.base / p).resolve()
        if must_exist and not p.exists():
            raise ConfigurationError(f"[{self.name}] {key}: file not found: {p}")
        return p


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    extra = set(parser.sections()) - set(_KEYS)
    if extra:
        raise ConfigurationError(f"unknown sections: {', '.join(sorted(extra))}")
    base = path.resolve().parent
    g, p, a, r, o = (_Section(parser, n, base) for n in ("graph", "problem", "algorithm", "run", "output"))

    graph = {"weighting": g.str("weighting", "uniform")}
    edge_list = g.path("edge_list")
    if edge_list is not None:
        graph["edge_list"] = str(edge_list)
        graph["nodes"] = g.int("nodes")
    else:
        graph.update(nodes=g.int("nodes", required=True), edges=g.int("edges", required=True),
                     seed=g.int("seed", 0))

    kind = p.str("kind", required=True)
    if kind not in PROBLEMS:
        raise ConfigurationError(f"[problem] kind must be one of {PROBLEMS}, got {kind!r}")
    problem = {"kind": kind, "seed": p.int("seed", 0)}
    if kind == "benchmark":
        problem.update(dim=p.int("dim", 5), samples=p.int("samples", 200),
                       lam=p.float("lam", 0.001), mu=p.float("mu", 1.0))
        data = p.path("data")
        if data is not None:
            problem["data"] = str(data)
    else:
        problem.update(dim=p.int("dim", required=True), rank=p.int("rank", required=True),
                       rows=p.int("rows"), b=p.str("b", "random"))

    name = a.str("name", required=True)
    if name not in ALGORITHMS:
        raise ConfigurationError(f"[algorithm] name must be one of {ALGORITHMS}, got {name!r}")
    mode = a.str("mode", "tuned")
    if mode not in ("tuned", "theory"):
        raise ConfigurationError(f"[algorithm] mode must be 'tuned' or 'theory', got {mode!r}")
    algorithm = {"name": name, "mode": mode, "label": a.str("label")}
    # map_pro_ca without an explicit tau uses ceil(sqrt(kappa2)), fixed once the graph is built
    algorithm["tau"] = a.int("tau", None if name == "map_pro_ca" else 1)
    if algorithm["tau"] is not None and algorithm["tau"] < 1:
        raise ConfigurationError("[algorithm] tau must be >= 1")
    if name == "l_admm" and algorithm["tau"] != 1:
        raise ConfigurationError("[algorithm] l_admm does not use a mixing polynomial; drop tau")
    if a.has("coefficients"):
        if name != "map_pro":
            raise ConfigurationError("[algorithm] coefficients apply to map_pro only")
        try:
            algorithm["coefficients"] = tuple(float(c) for c in a.raw["coefficients"].split(","))
        except ValueError as exc:
            raise ConfigurationError(f"[algorithm] coefficients: {exc}") from None
    if mode == "theory":
        algorithm["kappa1"] = a.float("kappa1", 1.0)
        algorithm["safety"] = a.float("safety", 2.0)
    elif name == "l_admm":
        for key in ("gamma", "alpha", "beta"):
            algorithm[key] = a.float(key, required=True)
    else:
        for key in ("rho", "zeta", "alpha_bar"):
            algorithm[key] = a.float(key, required=True)
        algorithm["theta"] = a.float("theta", 1.0)
        if a.has("eta") == a.has("eta_fraction"):
            raise ConfigurationError("[algorithm] give exactly one of eta, eta_fraction")
        algorithm["eta"] = a.float("eta")
        algorithm["eta_fraction"] = a.float("eta_fraction")

    lyap = r.str("lyapunov", "auto")
    if lyap not in ("auto", "on", "off"):
        raise ConfigurationError("[run] lyapunov must be auto, on or off")
    run_spec = {"iterations": r.int("iterations", required=True), "stop_gap": r.float("stop_gap"),
                "round_budget": r.int("round_budget"), "lyapunov": lyap}
    if run_spec["iterations"] < 1:
        raise ConfigurationError("[run] iterations must be >= 1")

    out_dir = o.path("dir", must_exist=False) or base
    output = {"dir": str(out_dir)}
    for key, default in (("csv", "trajectory.csv"), ("summary", "summary.json"),
                         ("constants", "constants.json"), ("plot", None)):
        value = o.str(key, default)
        output[key] = None if value is None else str(out_dir / value)
    return ExperimentConfig(path, graph, problem, algorithm, run_spec, output)


def build_network(spec):
    if "edge_list" in spec:
        return Network.read_edge_list(spec["edge_list"], spec.get("nodes"))
    return random_connected_graph(spec["nodes"], spec["edges"], spec["seed"])


def build_problem(spec, n_nodes):
    if spec["kind"] == "benchmark":
        if "data" in spec:
            data = LogisticNonconvexData.from_csv(spec["data"], spec["lam"], spec["mu"])
            if data.shape[0] != n_nodes:
                raise ConfigurationError(f"dataset has {data.shape[0]} nodes, graph has {n_nodes}")
        else:
            data = generate_benchmark_data(n_nodes, spec["dim"], spec["samples"],
                                           spec["lam"], spec["mu"], spec["seed"])
        return logistic_nonconvex(data)
    return pl_quadratic(n_nodes, spec["dim"], spec["rank"], spec["seed"], spec["rows"], spec["b"])


def build_algorithm(spec, P, problem):
    """Returns ``(AlgoConfig, LemmaConstants or None)``."""
    name = spec["name"]
    if name == "map_pro_ca":
        tau = spec["tau"] or math.ceil(math.sqrt(spectral_bounds(P).kappa2))
        mixing = Chebyshev(tau).bind(P)
    else:
        mixing = Explicit(spec["tau"], spec.get("coefficients")).bind(P)
    if spec["mode"] == "theory":
        kappa1 = 1.0 if name == "l_admm" else spec["kappa1"]
        cfg, consts = select_parameters(
            problem.M_bar, spectral_bounds(P), kappa1, mixing=mixing, nu=problem.nu,
            n_nodes=problem.n_nodes, safety=spec["safety"],
        )
        if name != cfg.name:
            cfg = AlgoConfig(cfg.rho, cfg.theta, cfg.zeta, cfg.eta, cfg.alpha_bar, mixing,
                             mode="theory", name=name)
        return cfg, consts
    if name == "l_admm":
        cfg = l_admm_config(spec["gamma"], spec["alpha"], spec["beta"], P)
    else:
        eta = spec["eta"]
        if eta is None:
            _, hi = polynomial_spectral_range(mixing)
            eta = spec["eta_fraction"] * spec["zeta"] / hi
        cfg = AlgoConfig(spec["rho"], spec["theta"], spec["zeta"], eta, spec["alpha_bar"],
                         mixing, mode="tuned", name=name)
    try:
        consts = constants_for_config(problem, cfg)
    except (MapProError, ZeroDivisionError, ValueError):
        consts = None
    return cfg, consts


@dataclass
class Outcome:
    label: str
    config: AlgoConfig
    constants: object
    trajectory: object = None
    diverged_at: int = None

    @property
    def records(self):
        return self.trajectory.records if self.trajectory else []


def execute(exp, stop_gap=None):
    """Build and run one experiment. Raises DivergenceError on blow-up."""
    net = build_network(exp.graph)
    P = laplacian(net, exp.graph["weighting"])
    problem = build_problem(exp.problem, net.n_nodes)
    cfg, consts = build_algorithm(exp.algorithm, P, problem)
    lyap = exp.run["lyapunov"]
    if lyap == "auto":
        lyap = problem.f_star is not None and cfg.mode == "theory"
    else:
        lyap = lyap == "on"
    from mappro.metrics import Diagnostics

    diag = Diagnostics(problem, cfg, constants=consts, lyapunov=lyap)
    traj = run(problem, cfg, exp.run["iterations"], diagnostics=diag,
               stop_gap=exp.run["stop_gap"] if stop_gap is None else stop_gap,
               round_budget=exp.run["round_budget"], constants=consts)
    return Outcome(exp.label, cfg, consts, traj)


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _finite(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite(x) for x in v]
    return v


def _write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_finite(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def constants_payload(cfg, consts):
    out = {"algorithm": cfg.name, "mode": cfg.mode, "tau": cfg.tau,
           "parameters": {"rho": cfg.rho, "theta": cfg.theta, "zeta": cfg.zeta,
                          "eta": cfg.eta, "alpha_bar": cfg.alpha_bar}}
    if consts is None:
        out["constants"] = None
        return out
    out["constants"] = consts.as_dict()
    out["failed_conditions"] = consts.failed_conditions()
    return out


def theory_checks(records, consts):
    reports = [check_descent(records, consts), check_sandwich(records, consts)]
    reports += list(check_rates(records, consts).values())
    return {r.name: {"ok": r.ok, "checked": r.checked, "violations": len(r.violations),
                     "summary": r.summary()} for r in reports}


def summarize(outcome, stop_gap):
    recs = outcome.records
    first, last = recs[0], recs[-1]
    summary = {
        "algorithm": outcome.config.name,
        "label": outcome.label,
        "mode": outcome.config.mode,
        "tau": outcome.config.tau,
        "rounds_per_iteration": outcome.config.rounds_per_iteration(),
        "iterations": last.k,
        "rounds": last.rounds,
        "initial_gap": first.opt_gap,
        "final_gap": last.opt_gap,
        "stop_gap": stop_gap,
        "reached_stop_gap": stop_gap is not None and last.opt_gap <= stop_gap,
        "stopped_early": outcome.trajectory.stopped_early,
    }
    if outcome.config.mode == "theory" and outcome.constants is not None:
        summary["theory_checks"] = theory_checks(recs, outcome.constants)
    return summary


def cmd_run(args):
    exp = load_config(args.config)
    outcome = execute(exp)
    out = exp.output
    write_csv(outcome.records, out["csv"])
    _write_json(summarize(outcome, exp.run["stop_gap"]), out["summary"])
    _write_json(constants_payload(outcome.config, outcome.constants), out["constants"])
    plot = args.plot or out["plot"]
    if plot:
        from mappro.plotting import plot_gap

        plot_gap({outcome.label: outcome.records}, plot)
    last = outcome.records[-1]
    print(f"{outcome.label}: {last.k} iterations, {last.rounds} rounds, gap {last.opt_gap:.3e}")
    print(f"wrote {out['csv']}")
    return EXIT_OK


def cmd_constants(args):
    exp = load_config(args.config)
    net = build_network(exp.graph)
    P = laplacian(net, exp.graph["weighting"])
    problem = build_problem(exp.problem, net.n_nodes)
    cfg, consts = build_algorithm(exp.algorithm, P, problem)
    print(json.dumps(_finite(constants_payload(cfg, consts)), indent=2, sort_keys=True))
    return EXIT_OK


def rank_outcomes(outcomes, gap):
    """Rows ``(label, iterations, rounds)``; ``None`` counts mean the threshold was not reached."""
    rows = []
    for o in outcomes:
        hit = next((r for r in o.records if r.opt_gap <= gap), None)
        if o.diverged_at is not None or hit is None:
            rows.append((o.label, None, None))
        else:
            rows.append((o.label, hit.k, hit.rounds))
    reached = sorted((r for r in rows if r[2] is not None), key=lambda r: (r[2], r[0]))
    missed = sorted((r for r in rows if r[2] is None), key=lambda r: r[0])
    return reached + missed


def format_table(rows, gap):
    lines = [f"{'rank':>4}  {'algorithm':<16} {'iterations':>10} {'rounds':>8}"]
    for i, (label, its, rounds) in enumerate(rows, 1):
        if rounds is None:
            lines.append(f"{i:>4}  {label:<16} did not reach {gap:g}")
        else:
            lines.append(f"{i:>4}  {label:<16} {its:>10} {rounds:>8}")
    return "\n".join(lines)


def compare(experiments, gap):
    """Run every experiment to ``gap`` and rank by communication rounds."""
    if len(experiments) < 2:
        raise ConfigurationError("compare needs at least two configs")
    key = experiments[0].instance_key()
    for exp in experiments[1:]:
        if exp.instance_key() != key:
            raise ComparabilityError(
                f"{exp.path} describes a different graph or problem instance than {experiments[0].path}"
            )
    outcomes = []
    for exp in experiments:
        try:
            outcomes.append(execute(exp, stop_gap=gap))
        except DivergenceError as exc:
            outcomes.append(Outcome(exp.label, None, None, diverged_at=exc.iteration or -1))
    return outcomes, rank_outcomes(outcomes, gap)


def cmd_compare(args):
    experiments = [load_config(p) for p in args.configs]
    outcomes, rows = compare(experiments, args.gap)
    print(format_table(rows, args.gap))
    if args.out:
        import csv

        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "algorithm", "iterations", "rounds"])
            for i, (label, its, rounds) in enumerate(rows, 1):
                w.writerow([i, label, "" if its is None else its, "" if rounds is None else rounds])
    if args.plot:
        from mappro.plotting import plot_gap

        plot_gap({o.label: o.records for o in outcomes if o.records}, args.plot)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mappro", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment and write CSV, summary and constants")
    p.add_argument("config")
    p.add_argument("--plot", help="also save a gap figure to this path")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="rank experiments by rounds to reach a gap")
    p.add_argument("configs", nargs="+")
    p.add_argument("--gap", type=float, required=True, help="optimality-gap threshold to rank on")
    p.add_argument("--out", help="write the ranking table as CSV")
    p.add_argument("--plot", help="save a gap figure of all runs")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("constants", help="print the parameter constants without running")
    p.add_argument("config")
    p.set_defaults(func=cmd_constants)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InfeasibleParameters as exc:
        print(f"error: infeasible parameters ({exc.bound}): {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, ComparabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MapProError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
