import dataclasses
import json
import math

import numpy as np
import pytest

from recalib import SRSWOR, ClusterSRSWOR, Population, ht_total
from recalib import montecarlo as mc
from recalib.errors import ConfigurationError, ExperimentAborted, RankDeficiencyError

from conftest import random_population


def small_spec(rng, **kw):
    pop = random_population(rng, 40, 1)
    design = SRSWOR(40, 10)
    stats = [mc.ht_statistic(pop), mc.greg_statistic(pop), mc.optimal_statistic(pop)]
    base = dict(replications=400, seed=11, ratios=[("GREG", "HT"), ("Optimal", "GREG")])
    base.update(kw)
    return mc.ExperimentSpec(pop, design, stats, **base)


def test_worker_count_does_not_change_report(rng):
    spec = small_spec(rng)
    one = mc.run_experiment(spec).to_json()
    four = mc.run_experiment(dataclasses.replace(spec, workers=4)).to_json()
    assert one == four
    assert mc.run_experiment(spec).to_json() == one


def test_different_seed_changes_report(rng):
    spec = small_spec(rng)
    assert mc.run_experiment(spec).to_json() != mc.run_experiment(dataclasses.replace(spec, seed=12)).to_json()


def test_merge_of_blocks_equals_single_run(rng):
    spec = small_spec(rng)
    whole = mc.run_experiment(spec)
    a = mc.run_experiment(dataclasses.replace(spec, replications=150))
    b = mc.run_experiment(dataclasses.replace(spec, replications=250, first_replication=150))
    assert b.merge(a).to_dict()["statistics"] == whole.to_dict()["statistics"]
    assert a.merge(b).to_dict()["ratios"] == whole.to_dict()["ratios"]
    with pytest.raises(ConfigurationError):
        a.merge(a)


def test_json_roundtrip(rng):
    report = mc.run_experiment(small_spec(rng))
    data = json.loads(report.to_json())
    back = mc.SimulationReport.from_dict(data)
    assert back.to_dict() == report.to_dict()
    assert data["schema_version"] == 1


def test_csv_uses_17_significant_digits(rng):
    report = mc.run_experiment(small_spec(rng))
    rows = [line.split(",") for line in report.to_csv().splitlines()[1:]]
    means = {r[1]: r[3] for r in rows if r[0] == "statistic" and r[2] == "mean"}
    for name, text in means.items():
        assert float(text) == report.statistics[name].mean


def test_monte_carlo_mean_close_to_truth(rng):
    report = mc.run_experiment(small_spec(rng, replications=2000))
    ht = report.statistics["HT"]
    assert abs(ht.mean - ht.target) < 4 * ht.se_mean


def test_enumeration_mode_is_exact(pop6):
    design = SRSWOR(6, 3)
    spec = mc.ExperimentSpec(pop6, design, [mc.ht_statistic(pop6)], mode="enumerate")
    report = mc.run_experiment(spec)
    mean, var = mc.enumeration_oracle(design, pop6, lambda s: ht_total(s, design, pop6.y))
    assert report.statistics["HT"].mean == pytest.approx(pop6.t_y, abs=1e-10)
    assert report.statistics["HT"].variance == pytest.approx(var, rel=1e-12)
    assert mean == pytest.approx(pop6.t_y, abs=1e-10)


def test_oracle_vector_statistic(pop6):
    design = SRSWOR(6, 3)
    mean, cov = mc.enumeration_oracle(
        design, pop6, lambda s: [ht_total(s, design, pop6.y), ht_total(s, design, pop6.x)[0]]
    )
    np.testing.assert_allclose(mean, [pop6.t_y, pop6.t_x[0]])
    assert cov.shape == (2, 2)


def test_failures_abort_above_budget(rng):
    pop = random_population(rng, 20, 1)

    def flaky(sample):
        if sample.indices[0] % 2:
            raise RankDeficiencyError("synthetic", 1e20)
        return 1.0

    spec = mc.ExperimentSpec(pop, SRSWOR(20, 5), [mc.Statistic("flaky", flaky)], replications=100, seed=0)
    with pytest.raises(ExperimentAborted) as info:
        mc.run_experiment(spec)
    assert info.value.failures["RankDeficiencyError"] > 1


def test_spec_validation(rng):
    with pytest.raises(ConfigurationError):
        small_spec(rng, ratios=[("nope", "HT")]).validate()
    with pytest.raises(ConfigurationError):
        small_spec(rng, replications=1).validate()


def test_variance_ratio_of_identical_samples():
    a = np.random.default_rng(0).normal(size=500)
    ratio, se = mc.variance_ratio(a, a)
    assert ratio == 1.0
    assert se < 1e-6


def test_example2_model_ratio():
    r = mc.example2_variance_ratio(K=5, sig_s=1, sig_eps=1, sig_nu=1)
    assert r["beta_o"] == pytest.approx(5 / 6)
    assert r["beta_lim"] == pytest.approx(0.5)
    assert mc.STATED_EXAMPLE2_RATIOS[5] == 0.75


def test_example3_target_ratio():
    assert mc.example3_target_ratio(K=4, rho=0.2) == pytest.approx(0.4)
    assert mc.example3_target_ratio(K=2, rho=0.0) == pytest.approx(0.5)


def test_small_example_runs_are_sane():
    r1 = mc.reproduce_example1(n_per_stratum=20, R=200, pop_per_stratum=200, seed=3)
    assert r1.statistics["Optimal"].variance < 1e-6 * r1.statistics["GREG"].variance
    r3 = mc.reproduce_example3(M=2000, K=4, n=40, R=400, seed=3)
    assert 0.2 < r3.ratio("T_delta", "t_y1").ratio < 0.6
