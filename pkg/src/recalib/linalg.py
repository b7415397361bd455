"""Small dense solves with a conditioning gate or null-space projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import linalg as sla

from .errors import RankDeficiencyError

CONDITION_LIMIT = 1e12
NULL_RELATIVE_TOL = 1e-10


def condition_number(a: npt.NDArray[np.float64]) -> float:
    """2-norm condition number; ``inf`` for an exactly singular matrix."""
    s = np.linalg.svd(np.atleast_2d(a), compute_uv=False)
    if s.size == 0 or s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])


def gated_solve(
    a: npt.NDArray[np.float64],
    b: npt.NDArray[np.float64],
    limit: float = CONDITION_LIMIT,
    what: str = "matrix",
) -> npt.NDArray[np.float64]:
    """Solve ``a x = b`` for symmetric ``a``, refusing ill-conditioned systems.

    A Cholesky factorization is tried first; symmetric indefinite systems fall
    back to an LDL^T based solve.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    cond = condition_number(a)
    if not np.isfinite(cond) or cond > limit:
        raise RankDeficiencyError(
            f"{what} is singular or ill-conditioned (condition estimate {cond:.3g} > {limit:.3g})",
            condition=cond,
        )
    try:
        factor = sla.cho_factor(a, lower=True, check_finite=False)
        return sla.cho_solve(factor, b, check_finite=False)
    except np.linalg.LinAlgError:
        return sla.solve(a, b, assume_a="sym", check_finite=False)


@dataclass(frozen=True)
class ProjectedSolution:
    x: npt.NDArray[np.float64]
    null_dim: int
    condition: float


def projected_solve(
    a: npt.NDArray[np.float64],
    b: npt.NDArray[np.float64],
    scale: float = 0.0,
    rel_tol: float = NULL_RELATIVE_TOL,
) -> ProjectedSolution:
    """Least-norm solve of ``a x = b`` restricted to the well-determined subspace.

    Directions whose eigenvalue (singular value for non-symmetric ``a``) falls
    below ``rel_tol * max(largest, scale)`` are treated as null and the
    solution has no component along them. ``scale`` lets the caller supply
    the magnitude an exactly-zero matrix would have been built from, so that
    a matrix of pure rounding noise is recognised as null.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, a.T):
        vals, vecs = np.linalg.eigh(a)
        mags = np.abs(vals)
        left, right = vecs, vecs
    else:
        left, vals, right_t = np.linalg.svd(a)
        right = right_t.T
        mags = vals
    top = float(mags.max()) if mags.size else 0.0
    cut = rel_tol * max(top, scale)
    keep = mags > cut
    if not keep.any():
        return ProjectedSolution(np.zeros_like(b, dtype=float), int(a.shape[0]), float("inf"))
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    rhs = b.reshape(a.shape[0], -1)
    x = (right @ (inv[:, None] * (left.T @ rhs))).reshape(b.shape)
    kept = mags[keep]
    return ProjectedSolution(
        x=x, null_dim=int((~keep).sum()), condition=float(kept.max() / kept.min())
    )
