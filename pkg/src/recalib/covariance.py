"""Design-based covariance estimators for Horvitz-Thompson totals.

The plug-in estimators use the pair coefficients

    a_ij = (1/pi_ij) * (pi_ij / (pi_i pi_j) - c),     pi_ii = pi_i,

summed over all sampled pairs including ``i == j``. Covariates are centred
by ``t_X / N`` first. For every ``c`` the estimators are then unbiased for
the design covariances of the centred totals, provided every population pair
has ``pi_ij > 0``. Those coincide with the covariances of the raw totals
whenever ``sum_S 1/pi_i`` is the same in every sample (census, SRSWOR,
stratified SRSWOR, equal-size clusters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .design import Design, PairStructure, Sample
from .errors import DesignSupportError, UnsupportedOperationError
from .population import Population


@dataclass(frozen=True)
class CovEstimate:
    """Plug-in covariance estimates from one sample.

    ``sigma_xx_hat`` is the symmetric estimate with centred covariates in both
    slots. ``sigma_xx_cal`` keeps the second slot uncentred; it is the matrix
    that makes the optimal weights reproduce the known covariate total exactly
    and coincides with ``sigma_xx_hat`` when that total is zero. ``scale`` is
    the size of ``sum d_i^2 x_i x_i'``, used to recognise null directions.
    """

    sigma_xx_hat: npt.NDArray[np.float64]
    sigma_xy_hat: npt.NDArray[np.float64]
    c_used: float
    sigma_xx_cal: npt.NDArray[np.float64]
    scale: float


@dataclass(frozen=True)
class ExactCov:
    sigma_xx: npt.NDArray[np.float64]
    sigma_xy: npt.NDArray[np.float64]
    var_y: float


def recommended_c(design: Design) -> float:
    """``(n-1)N / (n(N-1))`` for SRSWOR, which zeroes every off-diagonal pair; 1 otherwise."""
    from .design import SRSWOR

    if isinstance(design, SRSWOR) and design.N > 1:
        n, N = design.n, design.N
        return (n - 1) * N / (n * (N - 1))
    return 1.0


def _check_support(ps: PairStructure) -> None:
    counts = np.bincount(ps.group)
    shared = counts[ps.group] >= 2
    if np.any(ps.same_pi[shared] <= 0):
        raise DesignSupportError("pi_ij = 0 for a sampled pair within one group")
    if np.count_nonzero(counts) >= 2 and (ps.cross_scale <= 0 or np.any(ps.cross_r <= 0)):
        raise DesignSupportError("pi_ij = 0 for a sampled pair in different groups")


def apply_pair_coefficients(
    ps: PairStructure, b: npt.NDArray[np.float64], c: float
) -> npt.NDArray[np.float64]:
    """Return ``A @ b`` for the sample pair-coefficient matrix ``A`` in O(n)."""
    b2 = np.asarray(b, dtype=float).reshape(len(ps.pi), -1)
    d = 1.0 / ps.pi
    groups = int(ps.group.max()) + 1 if ps.group.size else 0
    g_sum = np.zeros((groups, b2.shape[1]))
    np.add.at(g_sum, ps.group, b2)
    # sum_j b_j / pi_ij, split into diagonal, same-group and cross-group parts
    with np.errstate(divide="ignore", invalid="ignore"):
        same = np.where(ps.same_pi[:, None] > 0, (g_sum[ps.group] - b2) / ps.same_pi[:, None], 0.0)
    inv_pi = b2 * d[:, None] + same
    if groups > 1:
        br = b2 / ps.cross_r[:, None]
        r_sum = np.zeros_like(g_sum)
        np.add.at(r_sum, ps.group, br)
        inv_pi += (br.sum(axis=0)[None, :] - r_sum[ps.group]) / (ps.cross_scale * ps.cross_r[:, None])
    out = d[:, None] * (d @ b2)[None, :] - c * inv_pi
    return out.reshape(np.shape(b))


def pair_coefficients(design: Design, idx: npt.ArrayLike, c: float) -> npt.NDArray[np.float64]:
    """Dense matrix of ``(1/pi_ij)(pi_ij/(pi_i pi_j) - c)`` over the units ``idx``."""
    pij = design.pi_matrix(idx)
    pi = np.diag(pij).copy()
    with np.errstate(divide="ignore"):
        out = (1.0 / pij) * (pij / np.outer(pi, pi) - c)
    if not np.all(np.isfinite(out)):
        raise DesignSupportError("pi_ij = 0 for some pair; the estimator is undefined")
    return out


def _centred(pop: Population, known_t_x: npt.ArrayLike | None) -> npt.NDArray[np.float64]:
    t_x = pop.t_x if known_t_x is None else np.asarray(known_t_x, dtype=float).reshape(pop.p)
    return pop.x - t_x / pop.N


def cov_hat(
    sample: Sample,
    design: Design | None,
    pop: Population,
    c: float,
    known_t_x: npt.ArrayLike | None = None,
    dense: bool = False,
) -> CovEstimate:
    """Unbiased plug-in estimates of Var(t_X hat) and Cov(t_X hat, t_Y hat).

    Covariates are centred by ``known_t_x / N`` (default: the population
    total) first. ``dense=True`` assembles the full pair matrix instead of
    using the factored form; both give the same numbers.
    """
    design = sample.design if design is None else design
    if design.with_replacement:
        raise UnsupportedOperationError(
            f"plug-in covariance estimation needs pi_ij and is undefined for the with-replacement design {design.kind!r}"
        )
    idx = sample.indices
    x = pop.x[idx]
    xc = _centred(pop, known_t_x)[idx]
    y = pop.y[idx]
    p = pop.p
    d = 1.0 / design.pi()[idx]
    scale = float(np.linalg.eigvalsh((xc * (d * d)[:, None]).T @ xc).max()) if idx.size else 0.0
    if design.is_census:
        zeros = np.zeros((p, p))
        return CovEstimate(zeros, np.zeros(p), float(c), zeros.copy(), scale)
    if dense:
        a = pair_coefficients(design, idx, c)
        axc = a @ xc
    else:
        ps = design.pair_structure(idx)
        _check_support(ps)
        axc = apply_pair_coefficients(ps, xc, c)
    sxx = axc.T @ xc
    sxx = (sxx + sxx.T) / 2.0
    return CovEstimate(
        sigma_xx_hat=sxx,
        sigma_xy_hat=axc.T @ y,
        c_used=float(c),
        sigma_xx_cal=axc.T @ x,
        scale=scale,
    )


def _apply_population_pairs(design: Design, b: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """``P @ b`` with ``P_ij = pi_ij/(pi_i pi_j) - 1`` over the whole population."""
    ps = design.pair_structure(np.arange(design.N))
    d = 1.0 / ps.pi
    db = b * d[:, None]
    groups = int(ps.group.max()) + 1
    g_sum = np.zeros((groups, b.shape[1]))
    np.add.at(g_sum, ps.group, db)
    # sum_j pi_ij d_j b_j
    acc = b + ps.same_pi[:, None] * (g_sum[ps.group] - db)
    if groups > 1:
        rdb = db * ps.cross_r[:, None]
        r_sum = np.zeros_like(g_sum)
        np.add.at(r_sum, ps.group, rdb)
        acc += ps.cross_scale * ps.cross_r[:, None] * (rdb.sum(axis=0)[None, :] - r_sum[ps.group])
    return d[:, None] * acc - b.sum(axis=0)[None, :]


def cov_exact(design: Design, pop: Population, method: str = "closed_form") -> ExactCov:
    """Exact design covariances of the HT totals of x and y.

    ``closed_form`` evaluates the population double sums over ``pi_ij``;
    ``enumerate`` sums over every possible sample. With-replacement designs
    always use enumeration.
    """
    if method not in ("closed_form", "enumerate"):
        raise ValueError(f"unknown method {method!r}")
    if method == "enumerate" or design.with_replacement:
        return _cov_by_enumeration(design, pop)
    if design.is_census:
        return ExactCov(np.zeros((pop.p, pop.p)), np.zeros(pop.p), 0.0)
    xy = np.column_stack([pop.x, pop.y])
    m = xy.T @ _apply_population_pairs(design, xy)
    m = (m + m.T) / 2.0
    p = pop.p
    return ExactCov(m[:p, :p], m[:p, p], float(m[p, p]))


def _cov_by_enumeration(design: Design, pop: Population) -> ExactCov:
    from .estimators import ht_total

    probs, rows = [], []
    for sample, prob in design.enumerate_samples():
        probs.append(prob)
        rows.append(np.append(ht_total(sample, design, pop.x), ht_total(sample, design, pop.y)))
    probs_a = np.array(probs)
    vals = np.array(rows)
    mean = np.array([math.fsum(probs_a * v) for v in vals.T])
    dev = vals - mean
    m = (dev * probs_a[:, None]).T @ dev
    m = (m + m.T) / 2.0
    p = pop.p
    return ExactCov(m[:p, :p], m[:p, p], float(m[p, p]))
