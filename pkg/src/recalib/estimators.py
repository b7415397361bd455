"""Point estimators of a population total.

Covers Horvitz-Thompson totals, the GREG calibration estimator, the
minimum-variance regression estimator ``t_Y hat - beta' (t_X hat - t_X)``
with plug-in or exact coefficient, its explicit sample weights, the
two-sample and nested-sample variants, and the population least-squares
coefficient used as a comparator.

Every regression-type estimator takes the known covariate total explicitly
(``known_t_x``, default: the population total).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import numpy.typing as npt

from .covariance import CovEstimate, apply_pair_coefficients, cov_exact, cov_hat, recommended_c
from .design import Design, NestedSample, Sample
from .errors import (
    ConfigurationError,
    DegenerateDirectionWarning,
    DesignSupportError,
    RankDeficiencyError,
)
from .linalg import CONDITION_LIMIT, condition_number, gated_solve, projected_solve
from .population import Population, fsum_columns

Array = npt.NDArray[np.float64]


@dataclass(frozen=True)
class TotalsEstimate:
    t_y_hat: float
    t_x_hat: Array


@dataclass(frozen=True)
class BetaEstimate:
    """A regression coefficient and how it was obtained.

    ``null_dim`` counts directions where the covariance matrix was singular
    and the coefficient was set to zero.
    """

    beta: Array
    kind: str
    null_dim: int = 0
    condition: float = float("nan")


@dataclass(frozen=True)
class WeightSet:
    """Estimation weights for the sampled entries, aligned with ``indices``."""

    indices: npt.NDArray[np.intp]
    weights: Array
    kind: str
    calibration_target: Array | None = None
    params: Mapping[str, Any] = field(default_factory=dict)

    def total(self, values: npt.ArrayLike) -> float | Array:
        """Weighted total of a population-length array."""
        vals = np.asarray(values, dtype=float)[self.indices]
        if vals.ndim == 1:
            return float(math.fsum(self.weights * vals))
        return fsum_columns(self.weights[:, None] * vals)

    def as_dict(self) -> dict[int, float]:
        """Weights keyed by 1-based unit id (repeated draws are summed)."""
        out: dict[int, float] = {}
        for i, w in zip(self.indices.tolist(), self.weights.tolist()):
            out[i + 1] = out.get(i + 1, 0.0) + w
        return out


# ----------------------------------------------------------------- HT totals

def _design(sample: Sample, design: Design | None) -> Design:
    return sample.design if design is None else design


def ht_total(sample: Sample, design: Design | None, values: npt.ArrayLike) -> float | Array:
    """Horvitz-Thompson total of a population-length array (vector-valued rows allowed).

    Uses the sample's expansion weights, so repeated draws of a
    with-replacement design count once per draw. Sums are correctly rounded.
    """
    design = _design(sample, design)
    if not design.with_replacement:
        pi = design.pi()[sample.indices]
        if np.any(pi <= 0):
            raise DesignSupportError("sampled unit with zero inclusion probability")
    vals = np.asarray(values, dtype=float)[sample.indices]
    if vals.ndim == 1:
        return float(math.fsum(sample.weights * vals))
    return fsum_columns(sample.weights[:, None] * vals)


def ht_totals(sample: Sample, design: Design | None, pop: Population) -> TotalsEstimate:
    return TotalsEstimate(ht_total(sample, design, pop.y), ht_total(sample, design, pop.x))


def _known(pop: Population, known_t_x: npt.ArrayLike | None) -> Array:
    if known_t_x is None:
        return np.asarray(pop.t_x, dtype=float)
    t = np.asarray(known_t_x, dtype=float).reshape(-1)
    if t.shape != (pop.p,):
        raise ConfigurationError(f"known_t_x must have {pop.p} entries")
    return t


def _q(q: npt.ArrayLike | None, sample: Sample, pop: Population) -> Array:
    if q is None:
        return np.ones(len(sample))
    q = np.asarray(q, dtype=float)
    q = q[sample.indices] if q.shape == (pop.N,) else np.broadcast_to(q, (len(sample),))
    if np.any(q <= 0):
        raise ConfigurationError("q must be positive")
    return q


def _adjusted(t_y_hat: float, delta: Array, beta: Array) -> float:
    return float(t_y_hat - beta @ delta)


# ----------------------------------------------------------------------- GREG

def _greg_system(sample, design, pop, q):
    d = sample.weights
    x = pop.x[sample.indices]
    q = _q(q, sample, pop)
    h = (x * (q * d)[:, None]).T @ x
    return d, x, q, h


def greg_beta_hat(
    sample: Sample,
    design: Design | None,
    pop: Population,
    q: npt.ArrayLike | None = None,
    limit: float = CONDITION_LIMIT,
) -> BetaEstimate:
    """``H_q^{-1} sum d_i q_i y_i x_i`` with ``H_q = sum q_i d_i x_i x_i'``."""
    d, x, q, h = _greg_system(sample, design, pop, q)
    y = pop.y[sample.indices]
    beta = gated_solve(h, x.T @ (d * q * y), limit, what="H_q")
    return BetaEstimate(np.atleast_1d(beta), "GREG_beta_hat", condition=condition_number(h))


def greg_weights(
    sample: Sample,
    design: Design | None,
    pop: Population,
    q: npt.ArrayLike | None = None,
    known_t_x: npt.ArrayLike | None = None,
    limit: float = CONDITION_LIMIT,
) -> WeightSet:
    """Closed-form solution ``w_i = d_i (1 + q_i x_i' lambda)`` of the quadratic calibration program."""
    t_x = _known(pop, known_t_x)
    d, x, q_s, h = _greg_system(sample, design, pop, q)
    delta = ht_total(sample, design, pop.x) - t_x
    lam = -gated_solve(h, delta, limit, what="H_q")
    w = d * (1.0 + q_s * (x @ lam))
    return WeightSet(sample.indices, w, "GREG", t_x, {"q": "1" if q is None else "custom"})


def greg_estimate(
    sample: Sample,
    design: Design | None,
    pop: Population,
    q: npt.ArrayLike | None = None,
    known_t_x: npt.ArrayLike | None = None,
) -> float:
    """``t_Y hat - beta_hat' (t_X hat - t_X)``."""
    t_x = _known(pop, known_t_x)
    beta = greg_beta_hat(sample, design, pop, q).beta
    delta = ht_total(sample, design, pop.x) - t_x
    return _adjusted(ht_total(sample, design, pop.y), delta, beta)


def greg_objective(weights: Array, d: Array, q: Array | None = None) -> float:
    q = np.ones_like(d) if q is None else q
    return float(np.sum((weights - d) ** 2 / (d * q)))


# ------------------------------------------------------- minimum variance family

def fixed_beta_estimate(
    sample: Sample,
    design: Design | None,
    pop: Population,
    beta: npt.ArrayLike,
    known_t_x: npt.ArrayLike | None = None,
) -> float:
    """``t_Y hat - beta' (t_X hat - t_X)`` for a non-random ``beta``; unbiased for every ``beta``."""
    beta = np.asarray(beta, dtype=float).reshape(pop.p)
    delta = ht_total(sample, design, pop.x) - _known(pop, known_t_x)
    return _adjusted(ht_total(sample, design, pop.y), delta, beta)


def _warn_null(null_dim: int, what: str) -> None:
    if null_dim:
        warnings.warn(
            f"{what} is singular along {null_dim} direction(s); every coefficient gives the same "
            "variance there and those components are set to 0",
            DegenerateDirectionWarning,
            stacklevel=3,
        )


def beta_o_true(
    design: Design, pop: Population, method: str = "closed_form"
) -> BetaEstimate:
    """Exact variance-minimising coefficient ``Var(t_X hat)^{-1} Cov(t_X hat, t_Y hat)``."""
    cov = cov_exact(design, pop, method=method)
    xc = pop.x - pop.t_x / pop.N
    scale = float(np.linalg.eigvalsh((xc / design.pi()[:, None]).T @ xc).max())
    sol = projected_solve(cov.sigma_xx, cov.sigma_xy, scale=scale)
    _warn_null(sol.null_dim, "Var(t_X hat)")
    return BetaEstimate(np.atleast_1d(sol.x), "Optimal_beta_o", sol.null_dim, sol.condition)


def _plugin_beta(cov: CovEstimate, strict: bool, what: str) -> BetaEstimate:
    sol = projected_solve(cov.sigma_xx_cal, cov.sigma_xy_hat, scale=cov.scale)
    if sol.null_dim and strict:
        raise RankDeficiencyError(f"{what} is singular along {sol.null_dim} direction(s)", sol.condition)
    _warn_null(sol.null_dim, what)
    return BetaEstimate(np.atleast_1d(sol.x), "Optimal_beta_o_hat", sol.null_dim, sol.condition)


def beta_o_hat(
    sample: Sample,
    design: Design | None,
    pop: Population,
    c: float | None = None,
    known_t_x: npt.ArrayLike | None = None,
    strict: bool = False,
) -> BetaEstimate:
    """Plug-in coefficient from the unbiased pair-sum covariance estimates.

    ``c`` defaults to :func:`recommended_c`. Singular directions of the
    estimated covariance are projected out; ``strict=True`` raises instead.
    """
    design = _design(sample, design)
    c = recommended_c(design) if c is None else c
    cov = cov_hat(sample, design, pop, c, _known(pop, known_t_x))
    return _plugin_beta(cov, strict, "estimated Var(t_X hat)")


def optimal_estimate(
    sample: Sample,
    design: Design | None,
    pop: Population,
    c: float | None = None,
    known_t_x: npt.ArrayLike | None = None,
    strict: bool = False,
) -> float:
    """``t_Y hat - beta_o_hat' (t_X hat - t_X)``."""
    t_x = _known(pop, known_t_x)
    beta = beta_o_hat(sample, design, pop, c, t_x, strict).beta
    delta = ht_total(sample, design, pop.x) - t_x
    return _adjusted(ht_total(sample, design, pop.y), delta, beta)


def optimal_weights(
    sample: Sample,
    design: Design | None,
    pop: Population,
    c: float | None = None,
    known_t_x: npt.ArrayLike | None = None,
    strict: bool = False,
) -> WeightSet:
    """Sample weights whose weighted y-total is the optimal estimate.

    ``w_i = d_i - g_i' V^{-1} (t_X hat - t_X)`` with ``g_i = sum_j a_ij x_j``;
    they use only x, the inclusion probabilities and ``c``, never y.
    """
    design = _design(sample, design)
    c = recommended_c(design) if c is None else c
    t_x = _known(pop, known_t_x)
    cov = cov_hat(sample, design, pop, c, t_x)
    xc = (pop.x - t_x / pop.N)[sample.indices]
    g = apply_pair_coefficients(design.pair_structure(sample.indices), xc, c)
    delta = ht_total(sample, design, pop.x) - t_x
    sol = projected_solve(cov.sigma_xx_cal.T, delta, scale=cov.scale)
    if sol.null_dim and strict:
        raise RankDeficiencyError(f"estimated Var(t_X hat) is singular along {sol.null_dim} direction(s)")
    _warn_null(sol.null_dim, "estimated Var(t_X hat)")
    w = sample.weights - g @ sol.x
    return WeightSet(sample.indices, w, "OptimalC", t_x, {"c": float(c)})


# -------------------------------------------------------- partial knowledge of t_X

def two_sample_estimate(
    sample1: Sample,
    design1: Design | None,
    sample2: Sample,
    design2: Design | None,
    pop: Population,
    known_cov_mode: str = "plugin",
    c: float | None = None,
    covariances: Mapping[str, npt.ArrayLike] | None = None,
    beta: npt.ArrayLike | None = None,
) -> float:
    """``t_Y1 hat - beta' (t_X1 hat - t_X2 hat)`` from two independent samples.

    The coefficient is ``(Var t_X1 + Var t_X2)^{-1} Cov(t_X1, t_Y1)``. With
    ``known_cov_mode="plugin"`` the covariances are estimated from each sample
    (covariates centred by ``t_X2 hat / N``); with ``"analytic"`` they are read
    from ``covariances`` (keys ``sigma_x1``, ``sigma_x2``, ``sigma_x1y1``). A
    given ``beta`` overrides both.
    """
    design1 = _design(sample1, design1)
    design2 = _design(sample2, design2)
    t_y1 = ht_total(sample1, design1, pop.y)
    t_x1 = ht_total(sample1, design1, pop.x)
    t_x2 = ht_total(sample2, design2, pop.x)
    delta = np.atleast_1d(t_x1 - t_x2)
    if beta is not None:
        return _adjusted(t_y1, delta, np.asarray(beta, dtype=float).reshape(pop.p))
    if known_cov_mode == "plugin":
        c1 = recommended_c(design1) if c is None else c
        c2 = recommended_c(design2) if c is None else c
        cov1 = cov_hat(sample1, design1, pop, c1, t_x2)
        cov2 = cov_hat(sample2, design2, pop, c2, t_x2)
        combined = CovEstimate(
            cov1.sigma_xx_hat + cov2.sigma_xx_hat,
            cov1.sigma_xy_hat,
            c1,
            cov1.sigma_xx_cal + cov2.sigma_xx_hat,
            cov1.scale,
        )
        b = _plugin_beta(combined, False, "Var(t_X1 hat) + Var(t_X2 hat)").beta
    elif known_cov_mode == "analytic":
        if covariances is None:
            raise ConfigurationError("analytic mode needs the covariances mapping")
        s1 = np.atleast_2d(np.asarray(covariances["sigma_x1"], dtype=float))
        s2 = np.atleast_2d(np.asarray(covariances["sigma_x2"], dtype=float))
        s12 = np.atleast_1d(np.asarray(covariances["sigma_x1y1"], dtype=float))
        sol = projected_solve(s1 + s2, s12)
        _warn_null(sol.null_dim, "Var(t_X1 hat) + Var(t_X2 hat)")
        b = np.atleast_1d(sol.x)
    else:
        raise ConfigurationError(f"unknown known_cov_mode {known_cov_mode!r}")
    return _adjusted(t_y1, delta, b)


def example3_delta_covariances(
    N: int, n: int, K: int, rho: float, sigma: float, beta: float
) -> dict[str, float]:
    """Model variances of ``t_Y1 hat`` and ``delta_X hat`` and their covariance for the one-y-per-cluster scheme."""
    shrink = (K - 1) / K * (1.0 - rho)
    base = N * N / n * sigma**2
    return {
        "var_t_y1": base * beta**2,
        "var_delta": base * shrink,
        "cov_delta_y": base * shrink * beta,
    }


def delta_x_hat(nested: NestedSample, design: Any, pop: Population) -> Array:
    """``t_X hat`` from the y-subsample minus ``t_X hat`` from the x-supersample."""
    return np.atleast_1d(ht_total(nested.s1, None, pop.x) - ht_total(nested.s2, None, pop.x))


def delta_estimate(
    nested: NestedSample,
    design: Any,
    pop: Population,
    covariances: Mapping[str, npt.ArrayLike] | None = None,
    beta: npt.ArrayLike | None = None,
) -> float:
    """``t_Y1 hat - beta' delta_X hat`` with ``beta = Var(delta)^{-1} Cov(delta, t_Y1)``.

    ``covariances`` holds ``var_delta`` and ``cov_delta_y``; a zero
    ``var_delta`` leaves ``t_Y1 hat`` unchanged and warns.
    """
    t_y1 = ht_total(nested.s1, None, pop.y)
    delta = delta_x_hat(nested, design, pop)
    if beta is None:
        if covariances is None:
            raise ConfigurationError("delta_estimate needs covariances or an explicit beta")
        var = np.atleast_2d(np.asarray(covariances["var_delta"], dtype=float))
        cov = np.atleast_1d(np.asarray(covariances["cov_delta_y"], dtype=float))
        if not np.any(var):
            warnings.warn(
                "Var(delta_X hat) = 0: the supersample adds no information, returning t_Y1 hat",
                DegenerateDirectionWarning,
                stacklevel=2,
            )
            return t_y1
        sol = projected_solve(var, cov)
        _warn_null(sol.null_dim, "Var(delta_X hat)")
        beta = sol.x
    return _adjusted(t_y1, delta, np.atleast_1d(np.asarray(beta, dtype=float)))


# ------------------------------------------------------------------- comparator

def ols_beta_population(pop: Population, limit: float = CONDITION_LIMIT) -> BetaEstimate:
    """Unweighted least-squares coefficient of y on x over the whole population (no intercept)."""
    gram = pop.x.T @ pop.x
    beta = gated_solve(gram, pop.x.T @ pop.y, limit, what="population Gram matrix")
    return BetaEstimate(np.atleast_1d(beta), "OLS_population", condition=condition_number(gram))
