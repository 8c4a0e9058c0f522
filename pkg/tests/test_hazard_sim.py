import math

import numpy as np
import pytest

from vecurve.effects import EffectSpec
from vecurve.errors import DomainError, ValidationError
from vecurve.hazard_sim import (
    BaselineHazard,
    ScenarioSpec,
    builtin_scenario,
    hazard_upper_bound,
    hazard_value,
    scenario_from_dict,
    simulate_subject,
    simulate_trial,
    subject_stream,
)
from vecurve.rng import CounterStream, derive_key, uniforms

FLAT = BaselineHazard.constant(0.15, horizon=12.0)
LOW = BaselineHazard((0, 6), (0.1, 0.2), 12.0)
HIGH = BaselineHazard((0, 6), (0.2, 0.1), 12.0)
WANING = EffectSpec("linear", -4.0, 0.33)


def test_control_arm_unaffected():
    for t in (0.0, 3.3, 12.0):
        assert hazard_value(FLAT, WANING, 0, t) == 0.15


def test_vaccine_arm_at_origin():
    assert hazard_value(FLAT, WANING, 1, 0.0) == pytest.approx(0.15 * math.exp(-4), rel=1e-12)
    assert hazard_value(FLAT, WANING, 1, 0.0) == pytest.approx(0.002747, abs=5e-7)


def test_step_baseline_values():
    assert hazard_value(LOW, WANING, 0, 7.0) == 0.2
    assert hazard_value(LOW, WANING, 0, 5.999) == 0.1
    # the two segments overlap at t = 6 in the written definition; 6 belongs to the second
    assert hazard_value(LOW, WANING, 0, 6.0) == 0.2
    assert hazard_value(LOW, WANING, 0, 12.0) == 0.2


def test_beyond_horizon_is_domain_error():
    with pytest.raises(DomainError):
        hazard_value(LOW, WANING, 0, 12.5)


def test_upper_bounds():
    assert hazard_upper_bound(FLAT, WANING, 0, 12.0) == 0.15
    assert hazard_upper_bound(FLAT, WANING, 1, 12.0) == pytest.approx(0.15 * math.exp(-0.04), rel=1e-12)
    assert hazard_upper_bound(FLAT, WANING, 1, 12.0) == pytest.approx(0.14412, abs=5e-6)
    assert hazard_upper_bound(HIGH, WANING, 1, 12.0) == pytest.approx(0.2 * math.exp(-0.04), rel=1e-12)
    # per-subject bound only looks at [0, C]
    assert hazard_upper_bound(LOW, WANING, 0, 5.0) == 0.1


def test_upper_bound_dominates_on_grid():
    for base in (FLAT, LOW, HIGH):
        for eff in (WANING, EffectSpec("log", -1.66, 0.525), EffectSpec("sqrt", -1.6, 0.35),
                    EffectSpec("linear", 1.0, -0.2), EffectSpec("constant", -0.5)):
            for arm in (0, 1):
                bound = hazard_upper_bound(base, eff, arm, 12.0)
                t = np.linspace(1e-6, 12.0, 2001)
                assert np.all(hazard_value(base, eff, arm, t) <= bound * (1 + 1e-12))


def test_homogeneous_case_accepts_everything():
    class Recorder:
        def __init__(self):
            self.inner = np.random.default_rng(1)
            self.draws = []

        def random(self):
            u = self.inner.random()
            self.draws.append(u)
            return u

    rec = Recorder()
    events = simulate_subject(FLAT, WANING, 0, 12.0, rec)
    # every candidate inside [0, C] is accepted: gap draws are every other draw
    gaps = -np.log(rec.draws[0::2]) / 0.15
    expected = np.cumsum(gaps)
    expected = expected[expected <= 12.0]
    assert np.allclose(events, expected)


def _mean_count(baseline, effect, arm, censor, n, seed):
    rng = np.random.default_rng(seed)
    counts = np.array([len(simulate_subject(baseline, effect, arm, censor, rng)) for _ in range(n)])
    return counts.mean(), counts.std(ddof=1) / math.sqrt(n)


def test_control_mean_count_equals_cumulative_hazard():
    mean, se = _mean_count(FLAT, WANING, 0, 12.0, 100_000, 11)
    assert abs(mean - 1.8) < 3 * se


def test_vaccine_mean_count_equals_cumulative_hazard():
    expected = 0.15 / 0.33 * (math.exp(-4 + 0.33 * 12) - math.exp(-4))
    assert expected == pytest.approx(0.4284, abs=5e-4)
    mean, se = _mean_count(FLAT, WANING, 1, 12.0, 100_000, 12)
    assert abs(mean - expected) < 3 * se


def test_scenario_one_shape():
    ds = simulate_trial(builtin_scenario(1), seed=5)
    assert len(ds) == 2000
    assert np.all(ds.censor == 12.0)
    assert (ds.arm == 0).sum() == 1000


def test_scenario_four_censoring_range():
    ds = simulate_trial(builtin_scenario(4), seed=5)
    assert ds.censor.min() >= 6.0 and ds.censor.max() <= 10.0
    assert ds.event_time.max() <= 10.0


def test_same_seed_is_bit_identical():
    a = simulate_trial(builtin_scenario(7), seed=99, replicate=3)
    b = simulate_trial(builtin_scenario(7), seed=99, replicate=3)
    assert a == b
    assert a != simulate_trial(builtin_scenario(7), seed=99, replicate=4)


def test_vectorised_matches_scalar_thinning():
    spec = builtin_scenario(8)
    ds = simulate_trial(spec, seed=2024, replicate=1)
    for i in (0, 17, 999, 1000, 1500, 1999):
        stream = subject_stream(2024, 8, 1, i)
        events = simulate_subject(spec.baseline, spec.effect, int(ds.arm[i]), float(ds.censor[i]), stream)
        assert np.array_equal(events, ds.events_of(i))


def test_builtin_scenarios():
    s5 = builtin_scenario(5)
    assert s5.tau == 12 and s5.censoring == ("fixed", 12.0)
    assert s5.baseline.breakpoints == (0.0, 6.0) and s5.baseline.rates == (0.1, 0.2)
    s2 = builtin_scenario(2)
    assert s2.tau == 10 and s2.censoring == ("fixed", 10.0) and s2.baseline.rates == (0.15,)
    s8 = builtin_scenario(8)
    assert s8.censoring == ("uniform", 7.2, 12.0) and s8.baseline.rates == (0.2, 0.1)
    for s in range(1, 9):
        spec = builtin_scenario(s)
        assert spec.effect == EffectSpec("linear", -4.0, 0.33)
        assert spec.n_per_arm == 1000
        if spec.censoring[0] == "uniform":
            assert spec.censoring[1] == pytest.approx(0.6 * spec.tau)
    with pytest.raises(ValidationError):
        builtin_scenario(9)


def test_scenario_json_round_trip():
    d = {"tau": 12, "n_per_arm": 10, "censoring": {"type": "uniform", "a": 7.2, "b": 12},
         "baseline": {"breakpoints": [0, 6], "rates": [0.1, 0.2]},
         "effect": {"family": "linear", "beta0": -4, "beta1": 0.33}, "seed": 4}
    spec = scenario_from_dict(d)
    assert spec.censoring == ("uniform", 7.2, 12.0)
    assert spec.seed == 4
    assert scenario_from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("censoring", [("uniform", 8, 7), ("uniform", 0, 5), ("fixed", 13.0), ("weibull", 1)])
def test_scenario_validation(censoring):
    with pytest.raises(ValidationError):
        ScenarioSpec(12.0, 10, censoring, FLAT, WANING)


def _nelson_aalen_no_censoring(ds, arm, t):
    members = ds.arm == arm
    n = members.sum()
    ev = ds.event_time[members[ds.event_subject]]
    return np.array([(ev <= x).sum() / n for x in t]), n


def test_nelson_aalen_matches_cumulative_hazard():
    spec = ScenarioSpec(12.0, 50_000, ("fixed", 12.0), LOW, WANING, "na-check")
    ds = simulate_trial(spec, seed=8)
    grid = [3.0, 6.0, 9.0, 12.0]
    na, n = _nelson_aalen_no_censoring(ds, 0, grid)
    for x, est in zip(grid, na):
        truth = LOW.cumulative(x)
        assert abs(est - truth) < 3 * math.sqrt(truth / n)


def test_inflated_bound_gives_same_distribution():
    spec = ScenarioSpec(12.0, 50_000, ("fixed", 12.0), LOW, WANING, "inflate")
    a = simulate_trial(spec, seed=1)
    b = simulate_trial(spec, seed=2, lambda_scale=2.0)
    for arm in (0, 1):
        ca = np.bincount(a.event_subject, minlength=len(a))[a.arm == arm]
        cb = np.bincount(b.event_subject, minlength=len(b))[b.arm == arm]
        se = math.sqrt(ca.var(ddof=1) / ca.size + cb.var(ddof=1) / cb.size)
        assert abs(ca.mean() - cb.mean()) < 3 * se


def test_all_scenarios_terminate_with_finite_counts():
    for s in range(1, 9):
        ds = simulate_trial(builtin_scenario(s, n_per_arm=200), seed=s)
        assert np.isfinite(ds.event_time).all()
        assert ds.n_events < 10 * len(ds)


def test_uniforms_open_interval_and_stream_consistency():
    keys = derive_key(1, 2, 3, np.arange(1000))
    u = uniforms(keys, 5)
    assert np.all((u > 0) & (u < 1))
    stream = CounterStream(keys[10])
    seq = stream.random(8)
    assert np.array_equal(seq, [uniforms(keys[10], j) for j in range(8)])
    # subject keys do not depend on how many subjects are generated together
    assert np.array_equal(derive_key(1, 2, 3, np.arange(10)), keys[:10])


def test_uniforms_look_uniform():
    u = uniforms(derive_key(0, "ks", 0, np.arange(200_000)), 0)
    assert abs(u.mean() - 0.5) < 3 * math.sqrt(1 / 12 / u.size)
    hist = np.histogram(u, bins=20, range=(0, 1))[0]
    expected = u.size / 20
    chi2 = ((hist - expected) ** 2 / expected).sum()
    assert chi2 < 43.8  # 0.999 quantile, 19 df
