"""Recurrent-event trial data: subjects, counting-process records, incidence tables.

A :class:`TrialDataset` stores subjects column-wise (numpy arrays) because the
estimator and the simulator both work on whole arms at once; the
:attr:`TrialDataset.subjects` view materialises :class:`Subject` objects on
demand.  Time is measured in months since the start of analysis time.
"""

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import StructuralInputError, ValidationError

__all__ = [
    "CountingProcessRecord",
    "IncidenceInterval",
    "IncidenceTable",
    "Subject",
    "TrialDataset",
    "ingest_counting_process",
    "read_events_csv",
    "read_incidence_csv",
    "tabulate_calendar_incidence",
    "tabulate_incidence",
    "to_counting_process",
    "write_events_csv",
    "write_incidence_csv",
]

EVENTS_COLUMNS = ("subject_id", "arm", "stratum", "start", "stop", "status")
INCIDENCE_COLUMNS = ("calendar_index", "delta_time", "e0", "t0", "e1", "t1")


def _finite(value, name):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} is not a number: {value!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value}")
    return value


def _arm(value):
    try:
        arm = int(float(value))
    except (TypeError, ValueError):
        raise ValidationError(f"arm is not an integer: {value!r}") from None
    if arm not in (0, 1) or float(value) != arm:
        raise ValidationError(f"arm must be 0 or 1, got {value!r}")
    return arm


def _month(value):
    if value is None or value == "":
        return None
    month = int(float(value))
    if month != float(value) or not 1 <= month <= 12:
        raise ValidationError(f"vaccination_month must be an integer in 1..12, got {value!r}")
    return month


@dataclass(frozen=True)
class Subject:
    id: str
    arm: int
    stratum: str
    censor_time: float
    event_times: tuple = ()
    vaccination_month: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "stratum", str(self.stratum))
        object.__setattr__(self, "arm", _arm(self.arm))
        censor = _finite(self.censor_time, "censor_time")
        if censor <= 0:
            raise ValidationError(f"subject {self.id}: censor_time must be > 0")
        object.__setattr__(self, "censor_time", censor)
        times = tuple(_finite(t, "event time") for t in self.event_times)
        for a, b in zip(times, times[1:]):
            if b <= a:
                raise ValidationError(f"subject {self.id}: event times must be strictly increasing")
        if times and (times[0] <= 0 or times[-1] > censor):
            raise ValidationError(f"subject {self.id}: event times must lie in (0, censor_time]")
        object.__setattr__(self, "event_times", times)
        object.__setattr__(self, "vaccination_month", _month(self.vaccination_month))


@dataclass(frozen=True)
class CountingProcessRecord:
    subject_id: str
    start: float
    stop: float
    status: int
    arm: int
    stratum: str = "1"
    vaccination_month: int | None = None


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class TrialDataset:
    """Immutable collection of trial subjects.

    Parameters
    ----------
    ids : sequence of str
    arm : int array, values in {0, 1}
    stratum : sequence of str
    censor : float array, censoring times (> 0)
    event_subject : int array
        Index (into the subject arrays) of each event.
    event_time : float array
        Event times; together with ``event_subject`` sorted by subject then time.
    vaccination_month : int array, optional
        Calendar month 1..12 of each subject's analysis-time origin, 0 when unknown.
    time_unit : str
    """

    def __init__(self, ids, arm, stratum, censor, event_subject, event_time,
                 vaccination_month=None, time_unit="months", validate=True):
        n = len(ids)
        self.ids = tuple(str(i) for i in ids)
        self.arm = _readonly(np.asarray(arm, dtype=np.int8))
        self.stratum = tuple(str(s) for s in stratum)
        self.censor = _readonly(np.asarray(censor, dtype=float))
        event_subject = np.asarray(event_subject, dtype=np.int64)
        event_time = np.asarray(event_time, dtype=float)
        order = np.lexsort((event_time, event_subject))
        self.event_subject = _readonly(event_subject[order])
        self.event_time = _readonly(event_time[order])
        if vaccination_month is None:
            vaccination_month = np.zeros(n, dtype=np.int8)
        self.vaccination_month = _readonly(np.asarray(vaccination_month, dtype=np.int8))
        self.time_unit = time_unit
        if validate:
            self._validate()

    def _validate(self):
        n = len(self.ids)
        for name in ("arm", "censor", "vaccination_month"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have one entry per subject")
        if len(self.stratum) != n:
            raise ValidationError("stratum must have one entry per subject")
        if len(set(self.ids)) != n:
            raise ValidationError("subject ids must be unique")
        if n and not np.isin(self.arm, (0, 1)).all():
            raise ValidationError("arm must be 0 or 1")
        if not np.isfinite(self.censor).all() or (self.censor <= 0).any():
            raise ValidationError("censor times must be finite and > 0")
        vm = self.vaccination_month
        if ((vm < 0) | (vm > 12)).any():
            raise ValidationError("vaccination_month must be in 1..12")
        es, et = self.event_subject, self.event_time
        if es.size:
            if es.min() < 0 or es.max() >= n:
                raise ValidationError("event_subject index out of range")
            if not np.isfinite(et).all():
                raise ValidationError("event times must be finite")
            if (et <= 0).any() or (et > self.censor[es]).any():
                raise ValidationError("event times must lie in (0, censor_time]")
            same = es[1:] == es[:-1]
            if (same & (et[1:] <= et[:-1])).any():
                raise ValidationError("within-subject tied event times are not allowed")

    @classmethod
    def from_subjects(cls, subjects, time_unit="months"):
        subjects = list(subjects)
        es = [i for i, s in enumerate(subjects) for _ in s.event_times]
        et = [t for s in subjects for t in s.event_times]
        return cls(
            [s.id for s in subjects],
            [s.arm for s in subjects],
            [s.stratum for s in subjects],
            [s.censor_time for s in subjects],
            es, et,
            [s.vaccination_month or 0 for s in subjects],
            time_unit=time_unit,
        )

    def __len__(self):
        return len(self.ids)

    @property
    def n_events(self):
        return int(self.event_time.size)

    @cached_property
    def _event_offsets(self):
        return np.searchsorted(self.event_subject, np.arange(len(self.ids) + 1))

    def events_of(self, i):
        off = self._event_offsets
        return self.event_time[off[i]:off[i + 1]]

    @cached_property
    def subjects(self):
        return tuple(
            Subject(
                self.ids[i], int(self.arm[i]), self.stratum[i], float(self.censor[i]),
                tuple(float(t) for t in self.events_of(i)),
                int(self.vaccination_month[i]) or None,
            )
            for i in range(len(self.ids))
        )

    @cached_property
    def strata(self):
        """Sorted distinct stratum labels and the per-subject code array."""
        labels, codes = np.unique(np.asarray(self.stratum, dtype=object).astype(str), return_inverse=True)
        return tuple(labels), codes.ravel()

    def subset(self, index):
        """Dataset restricted to the given subject indices (in that order, duplicates allowed)."""
        index = np.asarray(index, dtype=np.int64)
        off = self._event_offsets
        counts = off[index + 1] - off[index]
        es = np.repeat(np.arange(index.size), counts)
        et = np.concatenate([self.event_time[off[i]:off[i + 1]] for i in index]) if index.size else []
        return TrialDataset(
            [self.ids[i] for i in index], self.arm[index], [self.stratum[i] for i in index],
            self.censor[index], es, et, self.vaccination_month[index], self.time_unit, validate=False,
        )

    def with_arms_swapped(self):
        return TrialDataset(self.ids, 1 - self.arm, self.stratum, self.censor, self.event_subject,
                            self.event_time, self.vaccination_month, self.time_unit, validate=False)

    def with_times_transformed(self, func):
        """Apply a strictly increasing map (with ``func(0) == 0``) to every time."""
        return TrialDataset(self.ids, self.arm, self.stratum, func(self.censor), self.event_subject,
                            func(self.event_time), self.vaccination_month, self.time_unit)

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.stratum == other.stratum
            and self.time_unit == other.time_unit
            and np.array_equal(self.arm, other.arm)
            and np.array_equal(self.censor, other.censor)
            and np.array_equal(self.event_subject, other.event_subject)
            and np.array_equal(self.event_time, other.event_time)
            and np.array_equal(self.vaccination_month, other.vaccination_month)
        )

    __hash__ = None

    def __repr__(self):
        return f"TrialDataset(n_subjects={len(self)}, n_events={self.n_events})"


def ingest_counting_process(rows):
    """Build a :class:`TrialDataset` from counting-process records.

    Records of one subject must tile ``[0, censor_time]`` exactly; they may
    arrive in any order.  Subjects appear in order of first occurrence.
    """
    by_subject = {}
    for r in rows:
        sid = str(r.subject_id)
        start = _finite(r.start, "start")
        stop = _finite(r.stop, "stop")
        if stop <= start:
            raise StructuralInputError(f"subject {sid}: record has start >= stop ({start}, {stop})")
        status = int(_finite(r.status, "status"))
        if status not in (0, 1) or float(r.status) != status:
            raise ValidationError(f"subject {sid}: status must be 0 or 1")
        by_subject.setdefault(sid, []).append(
            (start, stop, status, _arm(r.arm), str(r.stratum), _month(r.vaccination_month))
        )

    subjects = []
    for sid, recs in by_subject.items():
        recs.sort(key=lambda rec: (rec[0], rec[1]))
        arms = {rec[3] for rec in recs}
        strata = {rec[4] for rec in recs}
        months = {rec[5] for rec in recs}
        if len(arms) > 1 or len(strata) > 1 or len(months) > 1:
            raise ValidationError(f"subject {sid}: arm, stratum and vaccination_month must be constant")
        if recs[0][0] != 0:
            raise StructuralInputError(f"subject {sid}: first record must start at 0 (gap before {recs[0][0]})")
        for prev, cur in zip(recs, recs[1:]):
            if cur[0] < prev[1]:
                raise StructuralInputError(f"subject {sid}: overlapping intervals at {cur[0]}")
            if cur[0] > prev[1]:
                raise StructuralInputError(f"subject {sid}: gap between {prev[1]} and {cur[0]}")
        events = tuple(rec[1] for rec in recs if rec[2] == 1)
        subjects.append(Subject(sid, recs[0][3], recs[0][4], recs[-1][1], events, recs[0][5]))
    return TrialDataset.from_subjects(subjects)


def to_counting_process(ds):
    """Split each subject's follow-up at its event times."""
    records = []
    for i, sid in enumerate(ds.ids):
        arm, stratum = int(ds.arm[i]), ds.stratum[i]
        vm = int(ds.vaccination_month[i]) or None
        start = 0.0
        for t in ds.events_of(i):
            records.append(CountingProcessRecord(sid, start, float(t), 1, arm, stratum, vm))
            start = float(t)
        censor = float(ds.censor[i])
        if censor > start:
            records.append(CountingProcessRecord(sid, start, censor, 0, arm, stratum, vm))
    return records


def _strip_comments(lines):
    return (line for line in lines if not line.lstrip().startswith("#"))


def read_events_csv(source):
    """Read an events CSV (path or text stream); ``#`` lines are provenance comments."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_events_csv(fh)
    reader = csv.DictReader(_strip_comments(source))
    missing = set(EVENTS_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValidationError(f"events CSV is missing columns: {sorted(missing)}")
    has_month = "vaccination_month" in reader.fieldnames
    rows = (
        CountingProcessRecord(
            row["subject_id"], row["start"], row["stop"], row["status"], row["arm"], row["stratum"],
            row["vaccination_month"] if has_month else None,
        )
        for row in reader
    )
    return ingest_counting_process(rows)


def _fmt(x):
    return repr(float(x))


def write_events_csv(ds, dest, comments=()):
    """Write ``ds`` in counting-process long format to a path or text stream."""
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_events_csv(ds, fh, comments)
    for line in comments:
        dest.write(f"# {line}\n")
    with_month = bool((ds.vaccination_month > 0).any())
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(EVENTS_COLUMNS + (("vaccination_month",) if with_month else ()))
    for r in to_counting_process(ds):
        row = [r.subject_id, r.arm, r.stratum, _fmt(r.start), _fmt(r.stop), r.status]
        if with_month:
            row.append("" if r.vaccination_month is None else r.vaccination_month)
        writer.writerow(row)


@dataclass(frozen=True)
class IncidenceInterval:
    delta_time: float
    e0: float
    t0: float
    e1: float | None = None
    t1: float | None = None
    calendar_index: int | None = None

    def __post_init__(self):
        if not self.delta_time > 0:
            raise ValidationError("interval delta_time must be > 0")
        for e, t, arm in ((self.e0, self.t0, 0), (self.e1, self.t1, 1)):
            if (e is None) != (t is None):
                raise ValidationError(f"arm {arm}: events and person-time must both be given or both be empty")
            if e is None:
                continue
            if not (math.isfinite(e) and math.isfinite(t)) or e < 0 or t < 0:
                raise ValidationError(f"arm {arm}: counts and person-time must be finite and >= 0")
            if t == 0 and e != 0:
                raise ValidationError(f"arm {arm}: events recorded with zero person-time")
        if self.calendar_index is not None and not 1 <= self.calendar_index <= 12:
            raise ValidationError("calendar_index must be in 1..12")

    @property
    def rate0(self):
        return self.e0 / self.t0

    @property
    def rate1(self):
        return self.e1 / self.t1


@dataclass(frozen=True)
class IncidenceTable:
    """Per-interval events and person-time by arm.

    Counts are floats so external tables given as rates (e.g. cases per 1000
    person-months) can be loaded with :meth:`from_rates`.
    """

    intervals: tuple

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(self.intervals))

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    @property
    def delta_times(self):
        return np.array([iv.delta_time for iv in self.intervals])

    @property
    def has_vaccine_arm(self):
        return all(iv.e1 is not None for iv in self.intervals)

    @classmethod
    def from_rates(cls, control_rates, delta_times, vaccine_rates=None, per=1000.0, calendar_index=None):
        """Build a table from incidence rates expressed per ``per`` person-time units."""
        n = len(delta_times)
        vaccine_rates = [None] * n if vaccine_rates is None else vaccine_rates
        calendar_index = [None] * n if calendar_index is None else calendar_index
        return cls(tuple(
            IncidenceInterval(float(d), float(r0), float(per),
                              None if r1 is None else float(r1), None if r1 is None else float(per), c)
            for d, r0, r1, c in zip(delta_times, control_rates, vaccine_rates, calendar_index)
        ))


def _boundaries(delta_times):
    delta = np.asarray(delta_times, dtype=float)
    if delta.size == 0:
        raise ValidationError("delta_times must not be empty")
    if not np.isfinite(delta).all() or (delta <= 0).any():
        raise ValidationError("delta_times must all be > 0")
    upper = np.cumsum(delta)
    return delta, np.concatenate([[0.0], upper[:-1]]), upper


def _arm_counts(censor, event_time, lower, upper):
    # person-time: overlap of [0, C_i] with (lower, upper]; events in (lower, upper]
    exposure = np.clip(np.minimum(censor[:, None], upper[None, :]) - lower[None, :], 0.0, None).sum(axis=0)
    idx = np.searchsorted(upper, event_time, side="left")
    idx = idx[idx < upper.size]
    events = np.bincount(idx, minlength=upper.size).astype(float)
    return events, exposure


def tabulate_incidence(ds, delta_times):
    """Events and person-time per arm on consecutive intervals starting at t = 0.

    Intervals are half-open ``(lower, upper]`` for events; an event exactly on a
    boundary belongs to the earlier interval.
    """
    delta, lower, upper = _boundaries(delta_times)
    cols = []
    for a in (0, 1):
        members = ds.arm == a
        ev = ds.event_time[members[ds.event_subject]]
        cols.append(_arm_counts(ds.censor[members], ev, lower, upper))
    (e0, t0), (e1, t1) = cols
    return IncidenceTable(tuple(
        IncidenceInterval(float(delta[k]), float(e0[k]), float(t0[k]), float(e1[k]), float(t1[k]))
        for k in range(delta.size)
    ))


def tabulate_calendar_incidence(ds, horizon=None):
    """Control-arm incidence re-indexed by calendar month.

    A subject vaccinated in calendar month ``m`` contributes analysis month
    ``(k-1, k]`` to calendar month ``((m + k - 2) mod 12) + 1``.  All
    follow-up up to ``horizon`` (default: the longest censoring time) is used,
    so follow-up beyond 12 months wraps into the same calendar months.
    """
    control = np.flatnonzero(ds.arm == 0)
    if control.size == 0:
        raise ValidationError("calendar incidence needs a non-empty control arm")
    months = ds.vaccination_month[control].astype(np.int64)
    if (months == 0).any():
        raise ValidationError("every control subject needs a vaccination_month")
    censor = ds.censor[control]
    if horizon is None:
        horizon = float(censor.max())
    n_months = int(math.ceil(horizon))
    lower = np.arange(n_months, dtype=float)
    upper = np.minimum(lower + 1.0, horizon)
    censor = np.minimum(censor, horizon)

    exposure = np.clip(np.minimum(censor[:, None], upper[None, :]) - lower[None, :], 0.0, None)
    cal = (months[:, None] - 1 + np.arange(n_months)[None, :]) % 12
    t0 = np.bincount(cal.ravel(), weights=exposure.ravel(), minlength=12)

    pos = {s: j for j, s in enumerate(control)}
    in_control = np.isin(ds.event_subject, control)
    ev_subj = ds.event_subject[in_control]
    ev_time = ds.event_time[in_control]
    keep = ev_time <= horizon
    ev_subj, ev_time = ev_subj[keep], ev_time[keep]
    k = np.ceil(ev_time).astype(np.int64) - 1  # analysis month index (k-1, k]
    m = np.array([months[pos[s]] for s in ev_subj], dtype=np.int64)
    e0 = np.bincount((m - 1 + k) % 12, minlength=12).astype(float)
    return IncidenceTable(tuple(
        IncidenceInterval(1.0, float(e0[c]), float(t0[c]), calendar_index=c + 1) for c in range(12)
    ))


def read_incidence_csv(source):
    """Read an incidence CSV; ``e1``/``t1`` and ``calendar_index`` may be empty."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_incidence_csv(fh)
    reader = csv.DictReader(_strip_comments(source))
    missing = {"delta_time", "e0", "t0"} - set(reader.fieldnames or ())
    if missing:
        raise ValidationError(f"incidence CSV is missing columns: {sorted(missing)}")

    def opt(row, key, conv):
        value = (row.get(key) or "").strip()
        return None if value == "" else conv(value)

    intervals = []
    for row in reader:
        intervals.append(IncidenceInterval(
            _finite(row["delta_time"], "delta_time"),
            _finite(row["e0"], "e0"),
            _finite(row["t0"], "t0"),
            opt(row, "e1", lambda v: _finite(v, "e1")),
            opt(row, "t1", lambda v: _finite(v, "t1")),
            opt(row, "calendar_index", _month),
        ))
    if not intervals:
        raise ValidationError("incidence CSV has no rows")
    return IncidenceTable(tuple(intervals))


def write_incidence_csv(table, dest, comments=()):
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_incidence_csv(table, fh, comments)
    for line in comments:
        dest.write(f"# {line}\n")
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(INCIDENCE_COLUMNS)
    for iv in table:
        writer.writerow([
            "" if iv.calendar_index is None else iv.calendar_index,
            _fmt(iv.delta_time), _fmt(iv.e0), _fmt(iv.t0),
            "" if iv.e1 is None else _fmt(iv.e1),
            "" if iv.t1 is None else _fmt(iv.t1),
        ])


def events_csv_text(ds):
    buf = io.StringIO()
    write_events_csv(ds, buf)
    return buf.getvalue()
