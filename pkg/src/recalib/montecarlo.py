"""Experiment engine: exact enumeration, seeded Monte Carlo and the example reproductions.

Replication ``r`` of an experiment with seed ``s`` draws from its own stream
``SeedSequence(s, spawn_key=(1, r))``; synthetic populations use
``spawn_key=(0,)``. Results therefore do not depend on how replications are
split across workers, and blocks of replications can be merged exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import numpy.typing as npt

from . import estimators as est
from .covariance import recommended_c
from .design import ClusterSRSWOR, ClusterWithReplacement, Design, NestedSupersample, StratifiedSRSWOR
from .errors import (
    ConfigurationError,
    DegenerateDirectionWarning,
    EstimationError,
    ExperimentAborted,
)
from .population import Population, generate_example1, generate_example2, generate_example3

SCHEMA_VERSION = 1
FAILURE_BUDGET = 0.01


@dataclass(frozen=True)
class Statistic:
    """A named scalar function of one drawn sample.

    ``target`` is the value the statistic should average to (used for MSE
    and unbiasedness checks); ``variance_target`` an analytic variance, if known.
    """

    name: str
    fn: Callable[[Any], float]
    target: float | None = None
    variance_target: float | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    population: Population
    design: Design | NestedSupersample
    statistics: Sequence[Statistic]
    replications: int = 1000
    seed: int = 0
    mode: str = "montecarlo"
    ratios: Sequence[tuple[str, str] | tuple[str, str, float | None]] = ()
    covariances: Sequence[tuple[str, str] | tuple[str, str, float | None]] = ()
    first_replication: int = 0
    workers: int = 1
    label: str = "experiment"
    params: Mapping[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in ("montecarlo", "enumerate"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "montecarlo" and self.replications < 2:
            raise ConfigurationError("montecarlo mode needs at least 2 replications")
        names = [s.name for s in self.statistics]
        if len(set(names)) != len(names):
            raise ConfigurationError("statistic names must be unique")
        for pair in [*self.ratios, *self.covariances]:
            for name in pair[:2]:
                if name not in names:
                    raise ConfigurationError(f"unknown statistic {name!r} in ratio/covariance list")
        if self.design.N != self.population.N:
            raise ConfigurationError("design and population sizes differ")

    def fingerprint(self) -> str:
        pop = self.population
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(pop.y).tobytes())
        h.update(np.ascontiguousarray(pop.x).tobytes())
        payload = {
            "population": h.hexdigest(),
            "design": self.design.describe(),
            "statistics": [s.name for s in self.statistics],
            "mode": self.mode,
            "seed": self.seed,
            "label": self.label,
            "params": _jsonable(dict(self.params)),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ------------------------------------------------------------------ summaries

@dataclass(frozen=True)
class StatSummary:
    name: str
    mean: float
    variance: float
    mse: float | None
    se_mean: float
    se_variance: float
    n_ok: int
    target: float | None = None
    variance_target: float | None = None


@dataclass(frozen=True)
class RatioSummary:
    """``Var(numerator) / Var(denominator)`` with a delta-method standard error."""

    numerator: str
    denominator: str
    ratio: float
    se: float
    target: float | None = None


@dataclass(frozen=True)
class CovSummary:
    first: str
    second: str
    covariance: float
    se: float
    target: float | None = None


@dataclass
class SimulationReport:
    statistics: dict[str, StatSummary]
    ratios: list[RatioSummary]
    covariances: list[CovSummary]
    failures: dict[str, int]
    metadata: dict[str, Any]
    extras: dict[str, Any] = field(default_factory=dict)
    values: npt.NDArray[np.float64] | None = field(default=None, repr=False, compare=False)
    rep_index: npt.NDArray[np.int64] | None = field(default=None, repr=False, compare=False)
    probabilities: npt.NDArray[np.float64] | None = field(default=None, repr=False, compare=False)
    _spec: ExperimentSpec | None = field(default=None, repr=False, compare=False)

    def ratio(self, numerator: str, denominator: str) -> RatioSummary:
        for r in self.ratios:
            if (r.numerator, r.denominator) == (numerator, denominator):
                return r
        raise KeyError((numerator, denominator))

    def merge(self, other: "SimulationReport") -> "SimulationReport":
        """Pool two Monte Carlo reports of the same experiment over disjoint replication blocks."""
        if self.metadata.get("mode") != "montecarlo" or other.metadata.get("mode") != "montecarlo":
            raise ConfigurationError("only montecarlo reports can be merged")
        if self.metadata["spec_hash"] != other.metadata["spec_hash"]:
            raise ConfigurationError("reports come from different experiments")
        if self.values is None or other.values is None or self._spec is None:
            raise ConfigurationError("reports without replication values cannot be merged")
        idx = np.concatenate([self.rep_index, other.rep_index])
        if np.unique(idx).size != idx.size:
            raise ConfigurationError("replication blocks overlap")
        order = np.argsort(idx, kind="stable")
        values = np.concatenate([self.values, other.values])[order]
        failures = dict(self.failures)
        for k, v in other.failures.items():
            failures[k] = failures.get(k, 0) + v
        return _build_report(self._spec, values, idx[order], None, failures, dict(self.extras))

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return _jsonable(
            {
                "schema_version": SCHEMA_VERSION,
                "metadata": self.metadata,
                "statistics": {k: asdict(v) for k, v in self.statistics.items()},
                "ratios": [asdict(r) for r in self.ratios],
                "covariances": [asdict(c) for c in self.covariances],
                "failures": self.failures,
                "extras": self.extras,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimulationReport":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported report schema_version {data.get('schema_version')!r}")

        def num(v):
            return float("nan") if v is None else v

        stats = {}
        for k, v in data["statistics"].items():
            v = dict(v)
            for key in ("mean", "variance", "se_mean", "se_variance"):
                v[key] = num(v[key])
            stats[k] = StatSummary(**v)
        ratios = [RatioSummary(**{**r, "ratio": num(r["ratio"]), "se": num(r["se"])}) for r in data["ratios"]]
        covs = [CovSummary(**{**c, "covariance": num(c["covariance"]), "se": num(c["se"])}) for c in data["covariances"]]
        return cls(stats, ratios, covs, dict(data["failures"]), dict(data["metadata"]), dict(data["extras"]))

    def to_csv(self) -> str:
        lines = ["section,name,field,value"]

        def emit(section, name, key, value):
            if isinstance(value, (int, float, np.floating)) and not isinstance(value, bool):
                text = "nan" if value is None or not math.isfinite(value) else format(float(value), ".17g")
            elif value is None:
                text = ""
            else:
                text = str(value)
            lines.append(f"{section},{name},{key},{text}")

        for k, v in sorted(self.metadata.items()):
            emit("metadata", "", k, v)
        for name in sorted(self.statistics):
            for key, value in asdict(self.statistics[name]).items():
                if key != "name":
                    emit("statistic", name, key, value)
        for r in self.ratios:
            for key in ("ratio", "se", "target"):
                emit("ratio", f"{r.numerator}/{r.denominator}", key, getattr(r, key))
        for c in self.covariances:
            for key in ("covariance", "se", "target"):
                emit("covariance", f"{c.first}/{c.second}", key, getattr(c, key))
        for k, v in sorted(self.failures.items()):
            emit("failures", k, "count", v)
        for k, v in sorted(_flatten(self.extras).items()):
            emit("extras", k, "value", v)
        return "\n".join(lines) + "\n"


def _flatten(d: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            for i, item in enumerate(v):
                out[f"{key}[{i}]"] = item
        else:
            out[key] = v
    return out


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------- moments

def _fsum_mean(v: npt.NDArray[np.float64]) -> float:
    return math.fsum(v) / v.size


def _summarize_mc(stat: Statistic, v: npt.NDArray[np.float64]) -> StatSummary:
    ok = v[np.isfinite(v)]
    n = ok.size
    if n < 2:
        nan = float("nan")
        return StatSummary(stat.name, nan, nan, None, nan, nan, n, stat.target, stat.variance_target)
    mean = _fsum_mean(ok)
    dev = ok - mean
    m2 = math.fsum(dev * dev) / n
    m4 = math.fsum(dev**4) / n
    var = m2 * n / (n - 1)
    mse = None if stat.target is None else math.fsum((ok - stat.target) ** 2) / n
    se_var = math.sqrt(max(m4 - m2 * m2, 0.0) / n)
    return StatSummary(stat.name, mean, var, mse, math.sqrt(var / n), se_var, n, stat.target, stat.variance_target)


def _summarize_exact(stat: Statistic, v: npt.NDArray[np.float64], p: npt.NDArray[np.float64]) -> StatSummary:
    mean = math.fsum(p * v)
    var = math.fsum(p * (v - mean) ** 2)
    mse = None if stat.target is None else math.fsum(p * (v - stat.target) ** 2)
    return StatSummary(stat.name, mean, var, mse, 0.0, 0.0, v.size, stat.target, stat.variance_target)


def variance_ratio(a: npt.NDArray[np.float64], b: npt.NDArray[np.float64]) -> tuple[float, float]:
    """``Var(a)/Var(b)`` and its delta-method standard error on the log scale."""
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    n = a.size
    if n < 2:
        return float("nan"), float("nan")
    ac, bc = a - _fsum_mean(a), b - _fsum_mean(b)
    va, vb = math.fsum(ac * ac) / n, math.fsum(bc * bc) / n
    if vb == 0.0:
        return float("nan"), float("nan")
    ratio = va / vb
    if va == 0.0:
        return 0.0, 0.0
    var_va = (math.fsum(ac**4) / n - va * va) / n
    var_vb = (math.fsum(bc**4) / n - vb * vb) / n
    cov_v = (math.fsum(ac * ac * bc * bc) / n - va * vb) / n
    var_log = var_va / va**2 + var_vb / vb**2 - 2.0 * cov_v / (va * vb)
    return ratio, ratio * math.sqrt(max(var_log, 0.0))


def _covariance_mc(a, b) -> tuple[float, float]:
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    n = a.size
    if n < 2:
        return float("nan"), float("nan")
    prod = (a - _fsum_mean(a)) * (b - _fsum_mean(b))
    cov = math.fsum(prod) / (n - 1)
    m = math.fsum(prod) / n
    se = math.sqrt(max(math.fsum(prod * prod) / n - m * m, 0.0) / n)
    return cov, se


def _pair(entry) -> tuple[str, str, float | None]:
    return (entry[0], entry[1], entry[2] if len(entry) > 2 else None)


def _build_report(spec, values, rep_index, probs, failures, extras) -> SimulationReport:
    stats = {}
    for k, stat in enumerate(spec.statistics):
        col = values[:, k]
        stats[stat.name] = _summarize_exact(stat, col, probs) if probs is not None else _summarize_mc(stat, col)
    col_of = {s.name: k for k, s in enumerate(spec.statistics)}
    ratios = []
    for entry in spec.ratios:
        num, den, target = _pair(entry)
        if probs is not None:
            vd = stats[den].variance
            r = stats[num].variance / vd if vd else float("nan")
            ratios.append(RatioSummary(num, den, r, 0.0, target))
        else:
            r, se = variance_ratio(values[:, col_of[num]], values[:, col_of[den]])
            ratios.append(RatioSummary(num, den, r, se, target))
    covs = []
    for entry in spec.covariances:
        a, b, target = _pair(entry)
        va, vb = values[:, col_of[a]], values[:, col_of[b]]
        if probs is not None:
            ma, mb = stats[a].mean, stats[b].mean
            covs.append(CovSummary(a, b, math.fsum(probs * (va - ma) * (vb - mb)), 0.0, target))
        else:
            covs.append(CovSummary(a, b, *_covariance_mc(va, vb), target))
    metadata = {
        "label": spec.label,
        "mode": spec.mode,
        "seed": spec.seed,
        "replications": int(values.shape[0]),
        "design": spec.design.describe(),
        "spec_hash": spec.fingerprint(),
        "schema_version": SCHEMA_VERSION,
        "params": _jsonable(dict(spec.params)),
    }
    if probs is None:
        metadata["first_replication"] = int(rep_index.min()) if rep_index.size else 0
    return SimulationReport(stats, ratios, covs, failures, metadata, extras, values, rep_index, probs, spec)


# ------------------------------------------------------------------ engine

def replication_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, int(r))))


def _evaluate(statistics: Sequence[Statistic], sample: Any, failures: dict[str, int]) -> list[float]:
    row = []
    for stat in statistics:
        try:
            row.append(float(stat.fn(sample)))
        except EstimationError as exc:
            failures[type(exc).__name__] = failures.get(type(exc).__name__, 0) + 1
            row.append(float("nan"))
    return row


def _run_block(spec: ExperimentSpec, reps: Sequence[int]) -> tuple[list[list[float]], dict[str, int], int]:
    failures: dict[str, int] = {}
    rows, failed = [], 0
    for r in reps:
        sample = spec.design.draw(replication_rng(spec.seed, r))
        row = _evaluate(spec.statistics, sample, failures)
        failed += any(math.isnan(v) for v in row)
        rows.append(row)
    return rows, failures, failed


def run_experiment(spec: ExperimentSpec) -> SimulationReport:
    """Run ``spec`` exactly (``mode="enumerate"``) or by seeded Monte Carlo.

    Estimation errors are counted per error kind and the statistic is left
    out of that replication; more than 1% failing replications aborts.
    """
    spec.validate()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDirectionWarning)
        if spec.mode == "enumerate":
            return _run_enumeration(spec)
        reps = np.arange(spec.first_replication, spec.first_replication + spec.replications)
        workers = max(1, int(spec.workers))
        blocks = [b for b in np.array_split(reps, workers) if b.size]
        if workers == 1:
            results = [_run_block(spec, blocks[0])]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda b: _run_block(spec, b), blocks))
    rows: list[list[float]] = []
    failures: dict[str, int] = {}
    failed = 0
    for block_rows, block_failures, block_failed in results:
        rows.extend(block_rows)
        failed += block_failed
        for k, v in block_failures.items():
            failures[k] = failures.get(k, 0) + v
    if failed > FAILURE_BUDGET * spec.replications:
        raise ExperimentAborted(
            f"{failed} of {spec.replications} replications failed (budget {FAILURE_BUDGET:.0%})", failures
        )
    values = np.array(rows, dtype=float).reshape(len(rows), len(spec.statistics))
    return _build_report(spec, values, reps.astype(np.int64), None, dict(sorted(failures.items())), {})


def _run_enumeration(spec: ExperimentSpec) -> SimulationReport:
    if isinstance(spec.design, NestedSupersample):
        raise ConfigurationError("enumeration of nested designs is not supported")
    failures: dict[str, int] = {}
    rows, probs = [], []
    for sample, prob in spec.design.enumerate_samples():
        rows.append(_evaluate(spec.statistics, sample, failures))
        probs.append(prob)
    values = np.array(rows, dtype=float).reshape(len(rows), len(spec.statistics))
    if failures:
        raise ExperimentAborted("estimators failed on some enumerated samples; exact moments undefined", failures)
    return _build_report(spec, values, np.arange(len(rows), dtype=np.int64), np.array(probs), {}, {})


def enumeration_oracle(
    design: Design, pop: Population, statistic: Callable[[Any], Any]
) -> tuple[Any, Any]:
    """Exact expectation and variance (covariance matrix for vector statistics) of ``statistic``."""
    if design.N != pop.N:
        raise ConfigurationError("design and population sizes differ")
    probs, vals = [], []
    for sample, prob in design.enumerate_samples():
        probs.append(prob)
        vals.append(np.asarray(statistic(sample), dtype=float))
    p = np.array(probs)
    v = np.array(vals)
    flat = v.reshape(len(p), -1)
    mean = np.array([math.fsum(p * col) for col in flat.T])
    dev = flat - mean
    cov = (dev * p[:, None]).T @ dev
    shape = v.shape[1:]
    if not shape:
        return float(mean[0]), float(cov[0, 0])
    if len(shape) == 1:
        return mean, cov
    return mean.reshape(shape), np.diag(cov).reshape(shape)


# ------------------------------------------------------- estimator factories

def ht_statistic(pop: Population, name: str = "HT") -> Statistic:
    return Statistic(name, lambda s: est.ht_total(s, None, pop.y), target=pop.t_y)


def greg_statistic(pop: Population, q=None, known_t_x=None, name: str = "GREG") -> Statistic:
    return Statistic(name, lambda s: est.greg_estimate(s, None, pop, q, known_t_x), target=pop.t_y)


def optimal_statistic(pop: Population, c: float | None = None, known_t_x=None, name: str = "Optimal") -> Statistic:
    return Statistic(name, lambda s: est.optimal_estimate(s, None, pop, c, known_t_x), target=pop.t_y)


def fixed_beta_statistic(pop: Population, beta, known_t_x=None, name: str | None = None) -> Statistic:
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    label = name or "FixedBeta(" + ",".join(format(b, ".6g") for b in beta) + ")"
    return Statistic(label, lambda s: est.fixed_beta_estimate(s, None, pop, beta, known_t_x), target=pop.t_y)


def greg_beta_statistic(pop: Population, coord: int = 0, target=None, name: str = "beta_hat") -> Statistic:
    return Statistic(name, lambda s: est.greg_beta_hat(s, None, pop).beta[coord], target=target)


def optimal_beta_statistic(
    pop: Population, c: float | None = None, coord: int = 0, target=None, name: str = "beta_o_hat"
) -> Statistic:
    return Statistic(name, lambda s: est.beta_o_hat(s, None, pop, c).beta[coord], target=target)


# ---------------------------------------------------- worked examples

def _population_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(0,))


def reproduce_example1(
    n_per_stratum: int = 50,
    sigma: float = 1.0,
    R: int = 10_000,
    seed: int = 0,
    pop_per_stratum: int = 1000,
    exact_moments: bool = True,
    c: float = 1.0,
    workers: int = 1,
) -> SimulationReport:
    """Two strata with y constant within stratum: GREG versus the optimal estimator.

    The population has exact stratum moments by default, so ``t_X = 0``.
    """
    pop = generate_example1(pop_per_stratum, sigma, seed=_population_seed(seed), exact_moments=exact_moments)
    design = StratifiedSRSWOR(pop.strata, [n_per_stratum, n_per_stratum])
    limit = 1.0 / (1.0 + sigma**2)
    beta_o = est.beta_o_true(design, pop).beta[0] if sigma > 0 else 0.0
    stats = [
        ht_statistic(pop),
        greg_statistic(pop),
        optimal_statistic(pop, c),
        greg_beta_statistic(pop, target=limit),
        optimal_beta_statistic(pop, c, target=beta_o),
    ]
    spec = ExperimentSpec(
        pop, design, stats, R, seed,
        ratios=[("Optimal", "GREG", 0.0)],
        workers=workers,
        label="example1",
        params={"n_per_stratum": n_per_stratum, "sigma": sigma, "pop_per_stratum": pop_per_stratum,
                "exact_moments": exact_moments, "c": c},
    )
    report = run_experiment(spec)
    beta_hat = report.values[:, 3]
    beta_hat = beta_hat[np.isfinite(beta_hat)]
    report.extras.update(
        {
            "targets": {"beta_hat_limit": limit, "beta_o": float(beta_o), "optimal_variance": 0.0},
            "beta_hat_quantiles": dict(zip(
                ["q05", "q25", "q50", "q75", "q95"],
                np.quantile(beta_hat, [0.05, 0.25, 0.5, 0.75, 0.95]).tolist(),
            )),
        }
    )
    return report


def example2_variance_ratio(K: int, sig_s: float, sig_eps: float, sig_nu: float, gamma: float = 1.0) -> dict[str, float]:
    """Coefficients and the exact model variance ratio of the two fixed-coefficient estimators.

    Per sampled cluster, ``Var(Y_j - b X_j)`` is proportional to
    ``K (1-b)^2 sig_s + gamma^2 sig_nu + b^2 sig_eps``.
    """
    beta_lim = sig_s / (sig_s + sig_eps)
    beta_o = sig_s / (sig_s + sig_eps / K)

    def v(b):
        return K * (1 - b) ** 2 * sig_s + gamma**2 * sig_nu + b**2 * sig_eps

    return {"beta_lim": beta_lim, "beta_o": beta_o, "model_ratio": v(beta_o) / v(beta_lim)}


STATED_EXAMPLE2_RATIOS = {5: 0.75, 10: 0.50}


def reproduce_example2(
    M: int = 5000,
    K: int = 5,
    sig_s: float = 1.0,
    sig_eps: float = 1.0,
    sig_nu: float = 1.0,
    R: int = 10_000,
    seed: int = 0,
    n: int = 200,
    gamma: float = 1.0,
    c: float = 1.0,
    workers: int = 1,
    plug_in: bool = True,
) -> SimulationReport:
    """Whole-cluster sampling: fixed coefficients ``beta_o`` versus ``beta_lim``, plus plug-in tracking."""
    pop = generate_example2(M, K, sig_s, sig_eps, sig_nu, gamma, seed=_population_seed(seed))
    design = ClusterSRSWOR(pop.clusters, n)
    coefs = example2_variance_ratio(K, sig_s, sig_eps, sig_nu, gamma)
    stats = [
        fixed_beta_statistic(pop, coefs["beta_o"], name="T_beta_o"),
        fixed_beta_statistic(pop, coefs["beta_lim"], name="T_beta_lim"),
        ht_statistic(pop),
    ]
    ratios: list[tuple[str, str, float | None]] = [("T_beta_o", "T_beta_lim", coefs["model_ratio"])]
    if plug_in:
        stats += [
            greg_statistic(pop),
            optimal_statistic(pop, c),
            greg_beta_statistic(pop, target=coefs["beta_lim"]),
            optimal_beta_statistic(pop, c, target=coefs["beta_o"]),
        ]
        ratios.append(("Optimal", "GREG", None))
    spec = ExperimentSpec(
        pop, design, stats, R, seed, ratios=ratios, workers=workers, label="example2",
        params={"M": M, "K": K, "sig_s": sig_s, "sig_eps": sig_eps, "sig_nu": sig_nu,
                "gamma": gamma, "n": n, "c": c, "plug_in": plug_in},
    )
    report = run_experiment(spec)
    targets = dict(coefs)
    if K in STATED_EXAMPLE2_RATIOS and sig_s == sig_eps == sig_nu:
        targets["stated_ratio"] = STATED_EXAMPLE2_RATIOS[K]
    report.extras["targets"] = targets
    return report


def example3_target_ratio(K: int, rho: float, beta: float = 1.0, sigma: float = 1.0, sig_eps: float = 0.0) -> float:
    """``Var(t_Y1 - beta_o3 delta_X) / Var(t_Y1)``; ``1 - (K-1)(1-rho)/K`` without noise."""
    signal = beta**2 * sigma**2
    total = signal + sig_eps**2
    if total == 0:
        return float("nan")
    return 1.0 - (K - 1) / K * (1.0 - rho) * signal / total


def reproduce_example3(
    M: int = 10_000,
    K: int = 4,
    beta: float = 1.0,
    sigma: float = 1.0,
    rho: float = 0.2,
    R: int = 20_000,
    seed: int = 0,
    n: int = 200,
    sig_eps: float = 0.0,
    exact_moments: bool = True,
    workers: int = 1,
) -> SimulationReport:
    """One y per drawn cluster, all K covariates: the nested-sample estimator versus ``t_Y1 hat``."""
    if M / n < 50:
        raise ConfigurationError(f"need M/n >= 50 for the with-replacement approximation, got {M / n:g}")
    pop = generate_example3(M, K, beta, sigma, rho, sig_eps, seed=_population_seed(seed), exact_moments=exact_moments)
    design = NestedSupersample(ClusterWithReplacement(pop.clusters, n), k_measured=1)
    N = M * K
    cov = est.example3_delta_covariances(N, n, K, rho, sigma, beta)
    cov["var_t_y1"] += N * N / n * sig_eps**2
    covariances = {"var_delta": cov["var_delta"], "cov_delta_y": cov["cov_delta_y"]}
    stats = [
        Statistic("t_y1", lambda s: est.ht_total(s.s1, None, pop.y), pop.t_y, cov["var_t_y1"]),
        Statistic("delta_x", lambda s: est.delta_x_hat(s, design, pop)[0], 0.0, cov["var_delta"]),
        Statistic("T_delta", lambda s: est.delta_estimate(s, design, pop, covariances), pop.t_y),
    ]
    target = example3_target_ratio(K, rho, beta, sigma, sig_eps)
    spec = ExperimentSpec(
        pop, design, stats, R, seed,
        ratios=[("T_delta", "t_y1", target)],
        covariances=[("delta_x", "t_y1", cov["cov_delta_y"])],
        workers=workers, label="example3",
        params={"M": M, "K": K, "beta": beta, "sigma": sigma, "rho": rho, "n": n,
                "sig_eps": sig_eps, "exact_moments": exact_moments},
    )
    report = run_experiment(spec)
    report.extras["targets"] = {**cov, "ratio": target}
    return report
