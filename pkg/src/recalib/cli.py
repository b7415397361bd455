"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 estimation error,
4 enumeration cap exceeded.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import estimators as est
from . import montecarlo as mc
from ._grammar import parse_call
from .covariance import cov_exact, cov_hat, recommended_c
from .design import Design, NestedSupersample, enumeration_cap, parse_design
from .errors import (
    ConfigurationError,
    EnumerationCapError,
    EstimationError,
    ExperimentAborted,
    RecalibError,
)
from .population import Population, SuperpopSpec, load_population

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_CAP = 0, 2, 3, 4
UNBIASED_TOL = 1e-10

_GENERATOR_ALIASES = {
    "example1": "stratified2",
    "example2": "clusterLinear",
    "example3": "clusterCorr",
    "stratified2": "stratified2",
    "clusterLinear": "clusterLinear",
    "clusterCorr": "clusterCorr",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recalib", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
        p.add_argument("--config", type=Path, help="JSON file with option values; flags override it")
        src = p.add_mutually_exclusive_group()
        src.add_argument("--population", type=Path, help="population CSV (y, x1..xp, stratum?, cluster?)")
        src.add_argument("--generate", help='generator spec, e.g. "example2(M=100, K=5, sig_s=1, sig_eps=1, sig_nu=1)"')
        p.add_argument("--design", help='design spec, e.g. "srswor(n=50)"')
        p.add_argument("--estimators", help="comma list: ht, greg, optimal, fixed:<b1>[;<b2>...], covhat")
        p.add_argument("--c", type=float, help="free constant of the pair-sum covariance estimators")
        p.add_argument("--known-tx", help="comma list of known covariate totals (default: population totals)")
        p.add_argument("--format", choices=["json", "csv"])
        p.add_argument("--output", type=Path, help="write the report here instead of stdout")
        p.add_argument("--seed", type=int)

    est_p = sub.add_parser("estimate", help="estimate the total from one sample")
    common(est_p)
    est_p.add_argument("--sample-ids", type=Path, help="file of 1-based unit ids instead of drawing")
    est_p.add_argument("--emit-weights", action="store_true", default=None)

    sim_p = sub.add_parser("simulate", help="Monte Carlo moments of the estimators")
    common(sim_p)
    sim_p.add_argument("--replications", type=int)
    sim_p.add_argument("--workers", type=int)

    enum_p = sub.add_parser("enumerate", help="exact moments by enumerating every sample")
    common(enum_p)

    ex_p = sub.add_parser("example", help="reproduce one of the three worked examples")
    ex_p.add_argument("which", type=int, choices=[1, 2, 3])
    ex_p.add_argument("--config", type=Path)
    ex_p.add_argument("--seed", type=int)
    ex_p.add_argument("--replications", "-R", type=int)
    ex_p.add_argument("--workers", type=int)
    ex_p.add_argument("--format", choices=["json", "csv"])
    ex_p.add_argument("--output", type=Path)
    for name, typ in [
        ("sigma", float), ("n-per-stratum", int), ("pop-per-stratum", int),
        ("M", int), ("K", int), ("n", int), ("sig-s", float), ("sig-eps", float),
        ("sig-nu", float), ("gamma", float), ("beta", float), ("rho", float), ("c", float),
    ]:
        ex_p.add_argument(f"--{name}", type=typ)
    return parser


def _merge_config(args: argparse.Namespace) -> dict[str, Any]:
    opts: dict[str, Any] = {}
    if getattr(args, "config", None) is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in data.items()})
    opts.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    return opts


def _population(opts: dict[str, Any]) -> Population:
    if opts.get("population") and opts.get("generate"):
        raise ConfigurationError("give exactly one of population and generate")
    if opts.get("population"):
        return load_population(opts["population"])
    if opts.get("generate"):
        name, kw = parse_call(opts["generate"])
        if name not in _GENERATOR_ALIASES:
            raise ConfigurationError(f"unknown generator {name!r}")
        seed = kw.pop("seed", opts.get("seed", 0))
        try:
            return SuperpopSpec(_GENERATOR_ALIASES[name], kw, seed).generate()
        except TypeError as exc:
            raise ConfigurationError(f"generator {name!r}: {exc}") from None
    raise ConfigurationError("no input: give population or generate")


def _known_tx(opts: dict[str, Any], pop: Population) -> np.ndarray | None:
    raw = opts.get("known_tx")
    if raw is None:
        return None
    vals = raw if isinstance(raw, list) else [v for v in str(raw).split(",") if v.strip()]
    try:
        arr = np.array([float(v) for v in vals])
    except ValueError:
        raise ConfigurationError(f"known_tx {raw!r} is not a list of numbers") from None
    if arr.shape != (pop.p,):
        raise ConfigurationError(f"known_tx needs {pop.p} values")
    return arr


def _estimator_names(opts: dict[str, Any], default: str) -> list[str]:
    raw = opts.get("estimators", default)
    names = raw if isinstance(raw, list) else [s.strip() for s in str(raw).split(",") if s.strip()]
    for name in names:
        base = name.split(":", 1)[0].lower()
        if base not in ("ht", "greg", "optimal", "fixed", "covhat"):
            raise ConfigurationError(f"unknown estimator {name!r}")
    return names


def _fixed_beta(name: str, pop: Population) -> np.ndarray:
    try:
        beta = np.array([float(v) for v in name.split(":", 1)[1].split(";")])
    except (IndexError, ValueError):
        raise ConfigurationError(f"estimator {name!r}: expected fixed:<b1>[;<b2>...]") from None
    if beta.shape != (pop.p,):
        raise ConfigurationError(f"estimator {name!r} needs {pop.p} coefficients")
    return beta


def _statistics(names: list[str], pop: Population, design: Design, c: float | None, t_x) -> list[mc.Statistic]:
    stats: list[mc.Statistic] = []
    for name in names:
        base = name.split(":", 1)[0].lower()
        if base == "ht":
            stats.append(mc.ht_statistic(pop))
        elif base == "greg":
            stats.append(mc.greg_statistic(pop, known_t_x=t_x))
        elif base == "optimal":
            stats.append(mc.optimal_statistic(pop, c, t_x))
        elif base == "fixed":
            stats.append(mc.fixed_beta_statistic(pop, _fixed_beta(name, pop), t_x))
        elif base == "covhat":
            stats.extend(_covhat_statistics(pop, design, c, t_x))
    return stats


def _covhat_statistics(pop, design, c, t_x) -> list[mc.Statistic]:
    c_val = recommended_c(design) if c is None else c
    exact = cov_exact(design, pop)
    out = []
    for i in range(pop.p):
        for j in range(i, pop.p):
            out.append(mc.Statistic(
                f"covhat_xx[{i + 1},{j + 1}]",
                lambda s, i=i, j=j: cov_hat(s, None, pop, c_val, t_x).sigma_xx_hat[i, j],
                target=float(exact.sigma_xx[i, j]),
            ))
    for i in range(pop.p):
        out.append(mc.Statistic(
            f"covhat_xy[{i + 1}]",
            lambda s, i=i: cov_hat(s, None, pop, c_val, t_x).sigma_xy_hat[i],
            target=float(exact.sigma_xy[i]),
        ))
    return out


def _design(opts: dict[str, Any], pop: Population):
    if not opts.get("design"):
        raise ConfigurationError("no design given")
    return parse_design(opts["design"], pop)


def _read_ids(path: Path, design: Design):
    try:
        tokens = Path(path).read_text().split()
        ids = [int(t) for t in tokens]
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read sample ids from {path}: {exc}") from None
    return design.make_sample(np.array(ids) - 1)


# ------------------------------------------------------------------ commands

def cmd_estimate(opts: dict[str, Any]) -> dict[str, Any]:
    pop = _population(opts)
    design = _design(opts, pop)
    if isinstance(design, NestedSupersample):
        raise ConfigurationError("nested designs are only supported by the example command")
    t_x = _known_tx(opts, pop)
    target_tx = pop.t_x if t_x is None else t_x
    if opts.get("sample_ids"):
        sample = _read_ids(opts["sample_ids"], design)
    else:
        sample = design.draw(np.random.default_rng(opts.get("seed", 0)))
    c = opts.get("c")
    names = _estimator_names(opts, "ht,greg,optimal")
    estimates: dict[str, float] = {}
    betas: dict[str, list[float]] = {}
    weights: dict[str, list[dict[str, float]]] = {}
    checks: dict[str, Any] = {}
    emit = bool(opts.get("emit_weights"))

    def weight_rows(ws: est.WeightSet) -> list[dict[str, float]]:
        return [{"id": k, "weight": v} for k, v in sorted(ws.as_dict().items())]

    def self_check(label: str, ws: est.WeightSet) -> None:
        dev = np.abs(np.atleast_1d(ws.total(pop.x)) - target_tx)
        rel = float(dev.max() / max(1.0, float(np.abs(target_tx).max())))
        checks[f"{label}_calibration"] = {"max_rel_dev": rel, "status": "PASS" if rel <= 1e-8 else "FAIL"}

    for name in names:
        base = name.split(":", 1)[0].lower()
        if base == "ht":
            estimates["HT"] = est.ht_total(sample, design, pop.y)
        elif base == "greg":
            estimates["GREG"] = est.greg_estimate(sample, design, pop, known_t_x=t_x)
            betas["GREG"] = est.greg_beta_hat(sample, design, pop).beta.tolist()
            if emit:
                ws = est.greg_weights(sample, design, pop, known_t_x=t_x)
                weights["GREG"] = weight_rows(ws)
                self_check("GREG", ws)
        elif base == "optimal":
            estimates["Optimal"] = est.optimal_estimate(sample, design, pop, c, t_x)
            betas["Optimal"] = est.beta_o_hat(sample, design, pop, c, t_x).beta.tolist()
            if emit:
                ws = est.optimal_weights(sample, design, pop, c, t_x)
                weights["Optimal"] = weight_rows(ws)
                self_check("Optimal", ws)
        elif base == "fixed":
            estimates[name] = est.fixed_beta_estimate(sample, design, pop, _fixed_beta(name, pop), t_x)
        elif base == "covhat":
            ch = cov_hat(sample, design, pop, recommended_c(design) if c is None else c, t_x)
            estimates.update({f"covhat_xx[{i + 1},{j + 1}]": float(ch.sigma_xx_hat[i, j])
                              for i in range(pop.p) for j in range(i, pop.p)})
            estimates.update({f"covhat_xy[{i + 1}]": float(ch.sigma_xy_hat[i]) for i in range(pop.p)})
    report = {
        "schema_version": mc.SCHEMA_VERSION,
        "command": "estimate",
        "design": design.describe(),
        "N": pop.N,
        "n": len(sample),
        "sample_ids": (sample.indices + 1).tolist(),
        "known_t_x": np.asarray(target_tx).tolist(),
        "estimates": estimates,
        "beta": betas,
    }
    if emit:
        report["weights"] = weights
        report["checks"] = checks
    return report


def cmd_simulate(opts: dict[str, Any]) -> mc.SimulationReport:
    if opts.get("seed") is None:
        raise ConfigurationError("simulate needs --seed")
    pop = _population(opts)
    design = _design(opts, pop)
    t_x = _known_tx(opts, pop)
    stats = _statistics(_estimator_names(opts, "ht,greg,optimal"), pop, design, opts.get("c"), t_x)
    spec = mc.ExperimentSpec(
        pop, design, stats, int(opts.get("replications", 1000)), int(opts["seed"]),
        workers=int(opts.get("workers", 1)), label="simulate",
        ratios=[(s.name, stats[0].name) for s in stats[1:]],
    )
    return mc.run_experiment(spec)


def cmd_enumerate(opts: dict[str, Any]) -> mc.SimulationReport:
    pop = _population(opts)
    design = _design(opts, pop)
    if isinstance(design, NestedSupersample):
        raise ConfigurationError("enumeration of nested designs is not supported")
    count = design.sample_count()
    cap = enumeration_cap()
    if count > cap:
        raise EnumerationCapError(count, cap)
    t_x = _known_tx(opts, pop)
    stats = _statistics(_estimator_names(opts, "ht"), pop, design, opts.get("c"), t_x)
    spec = mc.ExperimentSpec(pop, design, stats, mode="enumerate", seed=int(opts.get("seed", 0)), label="enumerate")
    report = mc.run_experiment(spec)
    verdicts = {}
    for name, s in report.statistics.items():
        if s.target is not None:
            ok = abs(s.mean - s.target) <= UNBIASED_TOL * max(1.0, abs(s.target))
            verdicts[name] = "PASS" if ok else "FAIL"
    report.extras["unbiasedness"] = verdicts
    report.extras["samples"] = count
    return report


_EXAMPLE_KEYS = {
    1: {"sigma": "sigma", "n_per_stratum": "n_per_stratum", "pop_per_stratum": "pop_per_stratum", "c": "c"},
    2: {"M": "M", "K": "K", "n": "n", "sig_s": "sig_s", "sig_eps": "sig_eps", "sig_nu": "sig_nu",
        "gamma": "gamma", "c": "c"},
    3: {"M": "M", "K": "K", "n": "n", "beta": "beta", "sigma": "sigma", "rho": "rho", "sig_eps": "sig_eps"},
}


def cmd_example(opts: dict[str, Any]) -> mc.SimulationReport:
    which = int(opts["which"])
    kwargs = {dst: opts[src] for src, dst in _EXAMPLE_KEYS[which].items() if src in opts}
    extra = sorted(set(opts) - set(_EXAMPLE_KEYS[which]) - {"which", "command", "seed", "replications",
                                                            "workers", "format", "output"})
    if extra:
        raise ConfigurationError(f"example {which} does not take option {extra[0]!r}")
    kwargs["seed"] = int(opts.get("seed", 0))
    if "replications" in opts:
        kwargs["R"] = int(opts["replications"])
    if "workers" in opts:
        kwargs["workers"] = int(opts["workers"])
    runner = {1: mc.reproduce_example1, 2: mc.reproduce_example2, 3: mc.reproduce_example3}[which]
    return runner(**kwargs)


# ------------------------------------------------------------------ output

def _estimate_csv(report: dict[str, Any]) -> str:
    lines = ["section,name,field,value"]

    def fmt(v):
        return format(float(v), ".17g") if isinstance(v, (float, int)) and not isinstance(v, bool) else str(v)

    for k in ("design", "N", "n"):
        lines.append(f"meta,,{k},{fmt(report[k])}")
    for name, v in report["estimates"].items():
        lines.append(f"estimate,{name},value,{fmt(v)}")
    for name, beta in report["beta"].items():
        for k, b in enumerate(beta):
            lines.append(f"beta,{name},{k + 1},{fmt(b)}")
    for name, rows in report.get("weights", {}).items():
        for row in rows:
            lines.append(f"weight,{name},{row['id']},{fmt(row['weight'])}")
    for name, chk in report.get("checks", {}).items():
        lines.append(f"check,{name},max_rel_dev,{fmt(chk['max_rel_dev'])}")
        lines.append(f"check,{name},status,{chk['status']}")
    return "\n".join(lines) + "\n"


def _render(result: Any, fmt: str) -> str:
    if isinstance(result, mc.SimulationReport):
        return result.to_json() if fmt == "json" else result.to_csv()
    if fmt == "json":
        return json.dumps(mc._jsonable(result), indent=2, sort_keys=True, allow_nan=False) + "\n"
    return _estimate_csv(result)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage and the offending token
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        opts = _merge_config(args)
        handler = {"estimate": cmd_estimate, "simulate": cmd_simulate,
                   "enumerate": cmd_enumerate, "example": cmd_example}[args.command]
        result = handler(opts)
        text = _render(result, opts.get("format", "json"))
    except EnumerationCapError as exc:
        print(f"recalib: enumeration cap exceeded: about {exc.count:.3g} samples ({exc.count}) > cap {exc.cap}",
              file=sys.stderr)
        return EXIT_CAP
    except (EstimationError, ExperimentAborted) as exc:
        print(f"recalib: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except ConfigurationError as exc:
        print(f"recalib: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = opts.get("output")
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
