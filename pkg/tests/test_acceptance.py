"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Every criterion prints one ``criterion N: PASS|FAIL ...`` line (also echoed
in the pytest terminal summary). Run directly with ``python
tests/test_acceptance.py`` for the lines alone.
"""

import math
import time

import numpy as np
import pytest

from recalib import (
    SRSWOR,
    Census,
    ClusterSRSWOR,
    Population,
    StratifiedSRSWOR,
    cov_exact,
    cov_hat,
    fixed_beta_estimate,
    greg_estimate,
    greg_weights,
    ht_total,
    load_population,
    optimal_estimate,
    optimal_weights,
    two_sample_estimate,
)
from recalib import montecarlo as mc
from recalib.covariance import pair_coefficients, recommended_c

from conftest import ACCEPTANCE, FIXTURES

_REPORTS: dict[str, str] = {}


def record(number: int, ok: bool, elapsed: float, budget: float, detail: str) -> None:
    within = elapsed < budget
    status = "PASS" if ok and within else "FAIL"
    line = f"criterion {number}: {status} ({elapsed:.2f}s of {budget:g}s) {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line
    assert within, line


def test_criterion_1_enumeration_unbiasedness():
    t0 = time.perf_counter()
    pop = load_population(FIXTURES / "pop6.csv")
    d = SRSWOR(6, 3)
    exact = cov_exact(d, pop)
    samples = list(d.enumerate_samples())
    worst = abs(math.fsum(p * ht_total(s, d, pop.y) for s, p in samples) - pop.t_y)
    for c in (0.0, 0.5, 1.0, recommended_c(d)):
        sxx = math.fsum(p * cov_hat(s, d, pop, c).sigma_xx_hat[0, 0] for s, p in samples)
        sxy = math.fsum(p * cov_hat(s, d, pop, c).sigma_xy_hat[0] for s, p in samples)
        worst = max(worst, abs(sxx - exact.sigma_xx[0, 0]), abs(sxy - exact.sigma_xy[0]))
    record(1, worst <= 1e-10 and recommended_c(d) == 0.8, time.perf_counter() - t0, 1,
           f"max abs deviation {worst:.2e} (tol 1e-10)")


def test_criterion_2_diagonal_only_c():
    t0 = time.perf_counter()
    worst = 0.0
    for N, n in [(6, 3), (10, 4), (25, 7), (40, 39)]:
        d = SRSWOR(N, n)
        a = pair_coefficients(d, np.arange(n), recommended_c(d))
        worst = max(worst, float(np.abs(a[~np.eye(n, dtype=bool)]).max()))
    record(2, worst <= 1e-14, time.perf_counter() - t0, 1, f"max off-diagonal |a_ij| {worst:.2e} (tol 1e-14)")


def _random_instance(rng):
    N = int(rng.integers(20, 201))
    p = int(rng.integers(1, 4))
    x = rng.normal(1.0, 1.0, size=(N, p)) * rng.uniform(0.5, 5.0, size=p)
    y = x @ rng.normal(size=p) + rng.normal(size=N)
    pop = Population(y, x)
    kind = rng.integers(3)
    if kind == 0:
        d = SRSWOR(N, int(rng.integers(p + 3, N // 2 + p + 3)))
    elif kind == 1:
        d = StratifiedSRSWOR(np.arange(N) % 2, [int(rng.integers(p + 2, N // 2 - 1))] * 2)
    else:
        K = 4
        M = N // K
        pop = Population(y[: M * K], x[: M * K])
        d = ClusterSRSWOR(np.repeat(np.arange(M), K), int(rng.integers(p + 1, M)))
    t_x = pop.t_x * rng.uniform(0.9, 1.1, size=p)
    return pop, d, d.draw(rng), t_x


def test_criterion_3_calibration_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_cal = worst_form = 0.0
    for _ in range(1000):
        pop, d, s, t_x = _random_instance(rng)
        scale = np.maximum(np.abs(t_x), 1.0)
        gw = greg_weights(s, d, pop, known_t_x=t_x)
        ow = optimal_weights(s, d, pop, known_t_x=t_x)
        for w in (gw, ow):
            worst_cal = max(worst_cal, float(np.max(np.abs(w.total(pop.x) - t_x) / scale)))
        for w, beta_form in ((gw, greg_estimate(s, d, pop, known_t_x=t_x)),
                             (ow, optimal_estimate(s, d, pop, known_t_x=t_x))):
            worst_form = max(worst_form, abs(w.total(pop.y) - beta_form) / max(abs(beta_form), 1.0))
    ok = worst_cal <= 1e-8 and worst_form <= 1e-8
    record(3, ok, time.perf_counter() - t0, 10,
           f"max rel calibration error {worst_cal:.2e}, max rel weight/beta-form gap {worst_form:.2e} (tol 1e-8)")


def _kkt_weights(d, x, q, t_x):
    n, p = x.shape
    kkt = np.zeros((n + p, n + p))
    kkt[:n, :n] = np.diag(2.0 / (d * q))
    kkt[:n, n:] = x
    kkt[n:, :n] = x.T
    return np.linalg.solve(kkt, np.concatenate([2.0 / q, t_x]))[:n]


def test_criterion_4_greg_qp_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        pop, d, s, t_x = _random_instance(rng)
        q = rng.uniform(0.5, 2.0, size=pop.N)
        w = greg_weights(s, d, pop, q=q, known_t_x=t_x).weights
        ref = _kkt_weights(s.weights, pop.x[s.indices], q[s.indices], t_x)
        worst = max(worst, float(np.max(np.abs(w - ref) / np.maximum(np.abs(ref), 1.0))))
    record(4, worst <= 1e-8, time.perf_counter() - t0, 5, f"max rel weight gap vs KKT solve {worst:.2e} (tol 1e-8)")


def test_criterion_5_optimality_of_beta0():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    x = rng.normal(2.0, 1.0, size=(8, 1))
    pop = Population(0.8 * x[:, 0] + rng.normal(size=8), x)
    d = SRSWOR(8, 4)
    cov = cov_exact(d, pop)
    beta0 = cov.sigma_xy[0] / cov.sigma_xx[0, 0]
    grid = np.linspace(beta0 - 1.37, beta0 + 0.63, 21)
    variances = [mc.enumeration_oracle(d, pop, lambda s, b=b: fixed_beta_estimate(s, d, pop, [b]))[1] for b in grid]
    best = int(np.argmin(variances))
    nearest = int(np.argmin(np.abs(grid - beta0)))
    record(5, best == nearest, time.perf_counter() - t0, 5,
           f"beta0={beta0:.4f}, grid argmin={grid[best]:.4f}, nearest grid point={grid[nearest]:.4f}")


def _example1(workers=1):
    return mc.reproduce_example1(sigma=1.0, n_per_stratum=50, R=10_000, seed=2024, workers=workers)


def test_criterion_6_example1():
    t0 = time.perf_counter()
    rep = _example1()
    elapsed = time.perf_counter() - t0
    _REPORTS["6"] = rep.to_json()
    beta = rep.statistics["beta_hat"].mean
    ratio = rep.ratio("Optimal", "GREG").ratio
    ok = abs(beta - 0.5) <= 0.03 and ratio < 0.05
    record(6, ok, elapsed, 60, f"mean beta_hat {beta:.4f} (0.5 +- 0.03), Var ratio Optimal/GREG {ratio:.3g} (< 0.05)")


def _example2(K, workers=1):
    return mc.reproduce_example2(M=5000, n=200, K=K, sig_s=1, sig_eps=1, sig_nu=1, R=10_000,
                                 seed=2024, plug_in=False, workers=workers)


def test_criterion_7_example2():
    t0 = time.perf_counter()
    parts, ok = [], True
    for K, target in ((5, 0.75), (10, 0.50)):
        rep = _example2(K)
        _REPORTS[f"7-{K}"] = rep.to_json()
        r = rep.ratio("T_beta_o", "T_beta_lim")
        ok &= abs(r.ratio - target) <= 0.05
        parts.append(f"K={K}: {r.ratio:.4f} (SE {r.se:.4f}, {target} +- 0.05)")
    record(7, ok, time.perf_counter() - t0, 300, "; ".join(parts))


def _example3(workers=1):
    return mc.reproduce_example3(M=10_000, n=200, K=4, beta=1.0, sigma=1.0, rho=0.2, sig_eps=0.0,
                                 R=20_000, seed=2024, workers=workers)


def test_criterion_8_example3():
    t0 = time.perf_counter()
    rep = _example3()
    elapsed = time.perf_counter() - t0
    _REPORTS["8"] = rep.to_json()
    r = rep.ratio("T_delta", "t_y1")
    ty = rep.statistics["t_y1"]
    target_var = 40_000**2 / 200
    z = (ty.variance - target_var) / ty.se_variance
    ok = abs(r.ratio - 0.40) <= 0.03 and abs(z) <= 3 and ty.variance_target == target_var
    record(8, ok, elapsed, 300,
           f"ratio {r.ratio:.4f} (0.40 +- 0.03); Var(t_y1) {ty.variance:.4g} vs {target_var:.4g} ({z:+.2f} SE)")


def test_criterion_9_two_sample_census_degeneracy():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(100):
        pop, d, s, _ = _random_instance(rng)
        census = Census(pop.N)
        s2 = census.draw(rng)
        if two_sample_estimate(s, d, s2, census, pop) != optimal_estimate(s, d, pop):
            mismatches += 1
    record(9, mismatches == 0, time.perf_counter() - t0, 5, f"{mismatches} of 100 instances differ bit-for-bit")


def test_criterion_10_determinism():
    missing = {"6", "7-5", "7-10", "8"} - set(_REPORTS)
    if missing:
        pytest.skip("criteria 6-8 did not run in this session")
    t0 = time.perf_counter()
    reruns = {
        "6": (lambda: _example1(), lambda: _example1(workers=4)),
        "7-5": (lambda: _example2(5), lambda: _example2(5, workers=3)),
        "7-10": (lambda: _example2(10), lambda: _example2(10, workers=4)),
        "8": (lambda: _example3(), lambda: _example3(workers=4)),
    }
    differing = []
    for key, (same, other_workers) in reruns.items():
        if same().to_json() != _REPORTS[key]:
            differing.append(f"{key} (same seed)")
        if other_workers().to_json() != _REPORTS[key]:
            differing.append(f"{key} (workers)")
    record(10, not differing, time.perf_counter() - t0, 900,
           "byte-identical reruns" if not differing else "differ: " + ", ".join(differing))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
