import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from vecurve.errors import StructuralInputError, ValidationError
from vecurve.trial_data import (
    CountingProcessRecord as R,
    IncidenceTable,
    Subject,
    TrialDataset,
    ingest_counting_process,
    read_events_csv,
    read_incidence_csv,
    tabulate_calendar_incidence,
    tabulate_incidence,
    to_counting_process,
    write_events_csv,
    write_incidence_csv,
)


def test_ingest_single_subject():
    ds = ingest_counting_process([R("s1", 0, 5, 1, 1), R("s1", 5, 12, 0, 1)])
    (s,) = ds.subjects
    assert s.event_times == (5.0,)
    assert s.censor_time == 12.0
    assert s.arm == 1


def test_ingest_unordered_records():
    ds = ingest_counting_process([R("s1", 5, 12, 0, 0), R("s1", 0, 5, 1, 0)])
    assert ds.subjects[0].event_times == (5.0,)


def test_ingest_empty_stream():
    ds = ingest_counting_process([])
    assert len(ds) == 0
    assert ds.n_events == 0


@pytest.mark.parametrize("rows, message", [
    ([R("s1", 0, 5, 1, 0), R("s1", 4, 12, 0, 0)], "overlapping"),
    ([R("s1", 0, 5, 1, 0), R("s1", 6, 12, 0, 0)], "gap"),
    ([R("s1", 1, 5, 1, 0)], "start at 0"),
])
def test_ingest_structural_errors(rows, message):
    with pytest.raises(StructuralInputError, match=message):
        ingest_counting_process(rows)


@pytest.mark.parametrize("row", [
    R("s1", 0, 5, 1, 2),
    R("s1", 0, float("nan"), 1, 0),
    R("s1", 0, float("inf"), 0, 0),
    R("s1", 0, 5, 2, 0),
])
def test_ingest_validation_errors(row):
    with pytest.raises(ValidationError):
        ingest_counting_process([row])


def test_arm_must_be_constant_within_subject():
    with pytest.raises(ValidationError):
        ingest_counting_process([R("s1", 0, 5, 1, 0), R("s1", 5, 12, 0, 1)])


def test_to_counting_process_splits_at_events():
    ds = TrialDataset.from_subjects([Subject("a", 0, "1", 10.0, (3.0, 7.0))])
    recs = [(r.start, r.stop, r.status) for r in to_counting_process(ds)]
    assert recs == [(0, 3, 1), (3, 7, 1), (7, 10, 0)]


def test_to_counting_process_no_events():
    ds = TrialDataset.from_subjects([Subject("a", 1, "1", 12.0)])
    recs = [(r.start, r.stop, r.status) for r in to_counting_process(ds)]
    assert recs == [(0, 12, 0)]


def test_event_at_censoring_time_has_no_trailing_record():
    ds = TrialDataset.from_subjects([Subject("a", 1, "1", 12.0, (12.0,))])
    recs = [(r.start, r.stop, r.status) for r in to_counting_process(ds)]
    assert recs == [(0, 12, 1)]
    assert ingest_counting_process(to_counting_process(ds)) == ds


def test_round_trip_random_fixture(rng):
    ds = random_dataset(rng, 50, n_strata=3)
    assert ingest_counting_process(to_counting_process(ds)) == ds


def test_csv_round_trip(rng):
    ds = random_dataset(rng, 50, n_strata=2)
    buf = io.StringIO()
    write_events_csv(ds, buf, comments=["provenance line"])
    buf.seek(0)
    assert read_events_csv(buf) == ds


def test_csv_missing_column():
    with pytest.raises(ValidationError, match="missing"):
        read_events_csv(io.StringIO("subject_id,arm,start,stop,status\na,0,0,1,0\n"))


@pytest.mark.parametrize("subject", [
    dict(id="a", arm=0, stratum="1", censor_time=0.0),
    dict(id="a", arm=0, stratum="1", censor_time=5.0, event_times=(2.0, 2.0)),
    dict(id="a", arm=0, stratum="1", censor_time=5.0, event_times=(6.0,)),
    dict(id="a", arm=0, stratum="1", censor_time=5.0, event_times=(0.0,)),
    dict(id="a", arm=0, stratum="1", censor_time=5.0, vaccination_month=13),
])
def test_subject_invariants(subject):
    with pytest.raises(ValidationError):
        Subject(**subject)


def test_duplicate_ids_rejected():
    with pytest.raises(ValidationError):
        TrialDataset.from_subjects([Subject("a", 0, "1", 1.0), Subject("a", 1, "1", 1.0)])


def test_dataset_arrays_are_immutable(fixture100):
    with pytest.raises(ValueError):
        fixture100.censor[0] = 1.0


def test_tabulate_full_follow_up():
    ds = TrialDataset.from_subjects([Subject("a", 0, "1", 12.0)])
    table = tabulate_incidence(ds, [3, 3, 3, 3])
    assert [iv.t0 for iv in table] == [3, 3, 3, 3]
    assert [iv.e0 for iv in table] == [0, 0, 0, 0]


def test_tabulate_truncated_overlap():
    ds = TrialDataset.from_subjects([Subject("a", 0, "1", 10.0)])
    assert [iv.t0 for iv in tabulate_incidence(ds, [3, 3, 3, 3])] == [3, 3, 3, 1]


def test_tabulate_ten_month_horizon():
    ds = TrialDataset.from_subjects([Subject("a", 0, "1", 12.0, (9.5, 10.0, 10.5))])
    table = tabulate_incidence(ds, [3, 3, 3, 1])
    assert table.delta_times.tolist() == [3, 3, 3, 1]
    assert [iv.t0 for iv in table] == [3, 3, 3, 1]
    assert [iv.e0 for iv in table] == [0, 0, 0, 2]


def test_boundary_event_goes_to_earlier_interval():
    ds = TrialDataset.from_subjects([Subject("a", 1, "1", 12.0, (3.0, 6.0, 6.5))])
    assert [iv.e1 for iv in tabulate_incidence(ds, [3, 3, 3, 3])] == [1, 1, 1, 0]


def test_tabulate_empty_deltas(fixture100):
    with pytest.raises(ValidationError):
        tabulate_incidence(fixture100, [])


def test_tabulate_totals(rng):
    ds = random_dataset(rng, 80)
    horizon = 10.0
    table = tabulate_incidence(ds, [3, 3, 3, 1])
    for arm, e_key, t_key in ((0, "e0", "t0"), (1, "e1", "t1")):
        members = ds.arm == arm
        assert sum(getattr(iv, t_key) for iv in table) == pytest.approx(
            np.minimum(ds.censor[members], horizon).sum(), abs=1e-9)
        ev = ds.event_time[members[ds.event_subject]]
        assert sum(getattr(iv, e_key) for iv in table) == np.sum(ev <= horizon)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), perm_seed=st.integers(0, 2**32 - 1))
def test_tabulate_invariant_under_reordering(seed, perm_seed):
    ds = random_dataset(np.random.default_rng(seed), 30)
    perm = np.random.default_rng(perm_seed).permutation(len(ds))
    a = tabulate_incidence(ds, [2.5, 3, 4])
    b = tabulate_incidence(ds.subset(perm), [2.5, 3, 4])
    for x, y in zip(a, b):
        assert x.e0 == y.e0 and x.e1 == y.e1
        assert x.t0 == pytest.approx(y.t0, abs=1e-12) and x.t1 == pytest.approx(y.t1, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), strata=st.integers(1, 4))
def test_round_trip_property(seed, strata):
    ds = random_dataset(np.random.default_rng(seed), 20, n_strata=strata)
    assert ingest_counting_process(to_counting_process(ds)) == ds


def test_incidence_interval_invariants():
    with pytest.raises(ValidationError):
        IncidenceTable.from_rates([1.0], [0.0])
    with pytest.raises(ValidationError):
        read_incidence_csv(io.StringIO("calendar_index,delta_time,e0,t0,e1,t1\n,1,2,0,,\n"))


def test_incidence_csv_round_trip_control_only():
    table = IncidenceTable.from_rates([23.4, 10.2], [1, 1], calendar_index=[6, 7])
    buf = io.StringIO()
    write_incidence_csv(table, buf)
    buf.seek(0)
    back = read_incidence_csv(buf)
    assert back == table
    assert not back.has_vaccine_arm


def _with_months(ds, months):
    return TrialDataset(ds.ids, ds.arm, ds.stratum, ds.censor, ds.event_subject, ds.event_time, months)


def test_calendar_identity_when_all_vaccinated_in_january(rng):
    ds = _with_months(random_dataset(rng, 60), np.ones(60, dtype=int))
    cal = tabulate_calendar_incidence(ds, horizon=12.0)
    plain = tabulate_incidence(ds, [1.0] * 12)
    for c, p in zip(cal, plain):
        assert c.e0 == p.e0
        assert c.t0 == pytest.approx(p.t0, abs=1e-12)
    assert [c.calendar_index for c in cal] == list(range(1, 13))


def test_calendar_wrap_around():
    ds = TrialDataset.from_subjects([Subject("a", 0, "1", 2.0, (0.5, 1.5), vaccination_month=12)])
    cal = {iv.calendar_index: iv for iv in tabulate_calendar_incidence(ds)}
    assert cal[12].e0 == 1 and cal[12].t0 == 1.0
    assert cal[1].e0 == 1 and cal[1].t0 == 1.0
    assert sum(iv.t0 for iv in cal.values()) == 2.0


def test_calendar_requires_vaccination_month(fixture100):
    with pytest.raises(ValidationError):
        tabulate_calendar_incidence(fixture100)


def test_calendar_symmetry_under_uniform_vaccination_months():
    from vecurve.effects import EffectSpec
    from vecurve.hazard_sim import BaselineHazard, ScenarioSpec, simulate_trial

    spec = ScenarioSpec(12.0, 12000, ("fixed", 12.0), BaselineHazard.constant(0.15),
                        EffectSpec("constant", 0.0), "calendar-symmetry")
    ds = simulate_trial(spec, 3)
    months = (np.arange(len(ds)) % 12) + 1
    cal = tabulate_calendar_incidence(_with_months(ds, months), horizon=12.0)
    rates = np.array([iv.e0 / iv.t0 for iv in cal])
    t0 = np.array([iv.t0 for iv in cal])
    se = np.sqrt(0.15 / t0)
    assert np.all(np.abs(rates - 0.15) < 3.5 * se)
    assert np.allclose(t0, t0[0])
