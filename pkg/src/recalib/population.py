"""Finite populations: containers, CSV loading and the synthetic superpopulations."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import numpy.typing as npt

from .errors import ConfigurationError, EmptyPopulationError, PopulationParseError, SchemaError


def fsum_columns(values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Correctly rounded column sums of a 1-D or 2-D array."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return np.float64(math.fsum(values))
    return np.array([math.fsum(col) for col in values.T], dtype=float)


@dataclass(frozen=True)
class Unit:
    id: int
    y: float
    x: tuple[float, ...]
    stratum: Any = None
    cluster: Any = None


@dataclass(frozen=True, eq=False)
class Population:
    """An immutable finite population.

    Units are stored column-wise: ``y`` has shape ``(N,)`` and ``x`` has
    shape ``(N, p)``. Unit ids are 1-based and follow row order; every other
    API in the package addresses units by 0-based row position.
    """

    y: npt.NDArray[np.float64]
    x: npt.NDArray[np.float64]
    strata: npt.NDArray[Any] | None = None
    clusters: npt.NDArray[Any] | None = None
    t_y: float = field(init=False)
    t_x: npt.NDArray[np.float64] = field(init=False)

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ConfigurationError("y must be (N,) and x must be (N, p) with matching N")
        if y.shape[0] < 1:
            raise EmptyPopulationError("population has no units")
        arrays = {"y": y, "x": x}
        for name in ("strata", "clusters"):
            labels = getattr(self, name)
            if labels is not None:
                labels = np.array(labels)
                if labels.shape != y.shape:
                    raise ConfigurationError(f"{name} labels must have one entry per unit")
                arrays[name] = labels
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        t_x = fsum_columns(x)
        t_x.setflags(write=False)
        object.__setattr__(self, "t_y", float(fsum_columns(y)))
        object.__setattr__(self, "t_x", t_x)

    @property
    def N(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def units(self) -> list[Unit]:
        strata = self.strata if self.strata is not None else [None] * self.N
        clusters = self.clusters if self.clusters is not None else [None] * self.N
        return [
            Unit(i + 1, float(self.y[i]), tuple(map(float, self.x[i])), _item(s), _item(c))
            for i, (s, c) in enumerate(zip(strata, clusters))
        ]

    def with_y(self, y: npt.ArrayLike) -> "Population":
        return Population(np.asarray(y, dtype=float), self.x, self.strata, self.clusters)

    def with_x(self, x: npt.ArrayLike) -> "Population":
        return Population(self.y, np.asarray(x, dtype=float), self.strata, self.clusters)


def _item(v: Any) -> Any:
    return v.item() if hasattr(v, "item") else v


# --------------------------------------------------------------------------- CSV

_X_COLUMN = re.compile(r"^x(\d+)$")


def load_population(path: str | Path, schema: Mapping[str, Any] | None = None) -> Population:
    """Read a population from a CSV file with a header row.

    ``schema`` maps roles to column names: ``y`` (default ``"y"``), ``x`` (a
    list, default every ``x<k>`` column in numeric order), and optional
    ``stratum`` / ``cluster`` (default: used when a column of that name exists).
    """
    schema = dict(schema or {})
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyPopulationError(f"{path}: file is empty") from None
        rows = [row for row in reader if any(cell.strip() for cell in row)]
    if not rows:
        raise EmptyPopulationError(f"{path}: no data rows")

    y_col = schema.get("y", "y")
    x_cols = schema.get("x")
    if x_cols is None:
        found = [(int(m.group(1)), h) for h in header if (m := _X_COLUMN.match(h))]
        x_cols = [h for _, h in sorted(found)]
    elif isinstance(x_cols, str):
        x_cols = [x_cols]
    if not x_cols:
        raise SchemaError(f"{path}: no covariate columns (expected x1..xp)")
    stratum_col = schema.get("stratum", "stratum" if "stratum" in header else None)
    cluster_col = schema.get("cluster", "cluster" if "cluster" in header else None)

    index = {}
    for col in [y_col, *x_cols] + [c for c in (stratum_col, cluster_col) if c]:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
        index[col] = header.index(col)

    def number(row_no: int, row: list[str], col: str) -> float:
        j = index[col]
        cell = row[j].strip() if j < len(row) else ""
        try:
            value = float(cell)
        except ValueError:
            raise PopulationParseError(
                f"{path}: row {row_no}, column {col!r}: cannot parse {cell!r} as a number",
                row=row_no,
                column=col,
            ) from None
        if not math.isfinite(value):
            raise PopulationParseError(
                f"{path}: row {row_no}, column {col!r}: non-finite value {cell!r}",
                row=row_no,
                column=col,
            )
        return value

    y = np.empty(len(rows))
    x = np.empty((len(rows), len(x_cols)))
    for r, row in enumerate(rows):
        y[r] = number(r + 1, row, y_col)
        for k, col in enumerate(x_cols):
            x[r, k] = number(r + 1, row, col)
    strata = _labels([row[index[stratum_col]] for row in rows]) if stratum_col else None
    clusters = _labels([row[index[cluster_col]] for row in rows]) if cluster_col else None
    return Population(y, x, strata, clusters)


def _labels(cells: list[str]) -> list[str] | list[int]:
    """Group labels, as integers when every label is an integer literal."""
    cells = [c.strip() for c in cells]
    try:
        return [int(c) for c in cells]
    except ValueError:
        return cells


def write_population(pop: Population, path: str | Path) -> None:
    """Write ``pop`` in the CSV layout read by :func:`load_population`."""
    header = ["y"] + [f"x{k + 1}" for k in range(pop.p)]
    if pop.strata is not None:
        header.append("stratum")
    if pop.clusters is not None:
        header.append("cluster")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(pop.N):
            row = [repr(float(pop.y[i]))] + [repr(float(v)) for v in pop.x[i]]
            if pop.strata is not None:
                row.append(str(_item(pop.strata[i])))
            if pop.clusters is not None:
                row.append(str(_item(pop.clusters[i])))
            writer.writerow(row)


# -------------------------------------------------------------------- generators

@dataclass(frozen=True)
class SuperpopSpec:
    """Parameters of one of the three synthetic superpopulations.

    ``variant`` is ``"stratified2"``, ``"clusterLinear"`` or ``"clusterCorr"``;
    ``params`` are the keyword arguments of the matching generator.
    """

    variant: str
    params: Mapping[str, Any]
    seed: int = 0

    def generate(self) -> Population:
        try:
            gen = _GENERATORS[self.variant]
        except KeyError:
            raise ConfigurationError(f"unknown superpopulation variant {self.variant!r}") from None
        return gen(**dict(self.params), seed=self.seed)


def _standardize(z: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    z = z - z.mean()
    sd = np.sqrt(np.mean(z * z))
    return z / sd if sd > 0 else z


def generate_example1(
    n_per_stratum_pop: int, sigma: float, seed: int | None = None, exact_moments: bool = False
) -> Population:
    """Two equal strata with x-means -1 and +1, x-sd ``sigma``, and y = -1 / +1.

    With ``exact_moments`` the within-stratum x values have exactly the stated
    mean and (population) variance, so that the population covariate total is 0.
    """
    if int(n_per_stratum_pop) != n_per_stratum_pop or n_per_stratum_pop < 2:
        raise ConfigurationError("n_per_stratum_pop must be an integer >= 2")
    if not sigma >= 0:
        raise ConfigurationError("sigma must be >= 0")
    n = int(n_per_stratum_pop)
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for mean in (-1.0, 1.0):
        z = rng.standard_normal(n)
        if exact_moments:
            z = _standardize(z)
        xs.append(mean + sigma * z)
        ys.append(np.full(n, mean))
    strata = np.repeat([1, 2], n)
    return Population(np.concatenate(ys), np.concatenate(xs)[:, None], strata=strata)


def generate_example2(
    M: int,
    K: int,
    sig_s: float,
    sig_eps: float,
    sig_nu: float,
    gamma: float = 1.0,
    seed: int | None = None,
) -> Population:
    """Clusters sharing a centre value: ``x = s_j + eps``, ``y = s_j + gamma * nu``.

    ``sig_s``, ``sig_eps`` and ``sig_nu`` are variances. Units are stored
    cluster by cluster, cluster labels are ``1..M``.
    """
    if M < 2 or K < 1 or int(M) != M or int(K) != K:
        raise ConfigurationError("need integer M >= 2 and K >= 1")
    if min(sig_s, sig_eps, sig_nu) < 0:
        raise ConfigurationError("variances must be >= 0")
    M, K = int(M), int(K)
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(M) * math.sqrt(sig_s)
    eps = rng.standard_normal((M, K)) * math.sqrt(sig_eps)
    nu = rng.standard_normal((M, K)) * math.sqrt(sig_nu)
    x = (s[:, None] + eps).ravel()
    y = (s[:, None] + gamma * nu).ravel()
    return Population(y, x[:, None], clusters=np.repeat(np.arange(1, M + 1), K))


def exchangeable_cov(K: int, sigma: float, rho: float) -> npt.NDArray[np.float64]:
    return sigma**2 * ((1.0 - rho) * np.eye(K) + rho * np.ones((K, K)))


def exchangeable_sqrt(K: int, sigma: float, rho: float, clamp: float = 1e-12) -> npt.NDArray[np.float64]:
    """Symmetric square root ``a I + b 11'`` of :func:`exchangeable_cov`.

    The two eigenvalues are clamped at 0 when within ``clamp`` of it, which
    covers both ends of the admissible ``rho`` range.
    """
    lam_perp = 1.0 - rho
    lam_ones = 1.0 + (K - 1) * rho
    lam_perp = 0.0 if lam_perp < clamp else lam_perp
    lam_ones = 0.0 if lam_ones < clamp else lam_ones
    a = sigma * math.sqrt(lam_perp)
    b = (sigma * math.sqrt(lam_ones) - a) / K
    return a * np.eye(K) + b * np.ones((K, K))


def generate_example3(
    M: int,
    K: int,
    beta: float,
    sigma: float,
    rho: float,
    sig_eps: float = 0.0,
    seed: int | None = None,
    exact_moments: bool = False,
) -> Population:
    """Clusters of ``K`` exchangeable covariates with ``y = beta * x + eps``.

    Within a cluster the x vector has covariance ``sigma^2 [(1-rho) I + rho 11']``;
    ``sig_eps`` is the standard deviation of the iid noise. With
    ``exact_moments`` the M x K covariate matrix is column-centred and whitened
    so that its empirical covariance (divisor M) equals the model covariance.
    """
    if M < 2 or K < 2 or int(M) != M or int(K) != K:
        raise ConfigurationError("need integer M >= 2 and K >= 2")
    if sigma < 0 or sig_eps < 0:
        raise ConfigurationError("sigma and sig_eps must be >= 0")
    lo = -1.0 / (K - 1)
    if not (lo - 1e-12 <= rho <= 1.0 + 1e-12):
        raise ConfigurationError(f"rho={rho} outside [{lo:.6g}, 1]; covariance would not be PSD")
    M, K = int(M), int(K)
    if exact_moments and M <= K:
        raise ConfigurationError("exact_moments needs M > K")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((M, K))
    if exact_moments:
        z = z - z.mean(axis=0)
        vals, vecs = np.linalg.eigh(z.T @ z / M)
        z = z @ ((vecs / np.sqrt(vals)) @ vecs.T)
    x = z @ exchangeable_sqrt(K, sigma, rho)
    eps = rng.standard_normal((M, K)) * sig_eps
    y = beta * x + eps
    return Population(y.ravel(), x.ravel()[:, None], clusters=np.repeat(np.arange(1, M + 1), K))


_GENERATORS = {
    "stratified2": generate_example1,
    "clusterLinear": generate_example2,
    "clusterCorr": generate_example3,
}
