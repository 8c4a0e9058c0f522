"""Vaccine impact: number of cases averted (NCA) and number needed to vaccinate.

All NCA values are cases averted per 1000 persons over the horizon covered by
the incidence table (the sum of its interval lengths).  Incidence rates are
events per person-month internally.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, UndefinedNNVError, ValidationError

__all__ = [
    "NCAResult",
    "nca_auc",
    "nca_auc_age",
    "nca_auc_seasonal",
    "nca_by_start_month",
    "nca_sf",
    "nnv",
]


@dataclass(frozen=True)
class NCAResult:
    variant: str
    horizon: float
    value: float
    per_interval: tuple = ()
    s: int | None = None

    @property
    def horizon_label(self):
        return f"per 1000 person-{self.horizon:g}-months"

    def to_dict(self):
        out = {"variant": self.variant}
        if self.s is not None:
            out["s"] = self.s
        out.update({
            "horizon_months": self.horizon,
            "units": self.horizon_label,
            "value": self.value,
            "per_interval": list(self.per_interval),
        })
        return out


def _control_rates(table):
    rates = []
    for k, iv in enumerate(table.intervals, start=1):
        if iv.t0 is None or iv.t0 <= 0:
            raise DegenerateDataError(f"interval {k}: zero control person-time")
        rates.append(iv.e0 / iv.t0)
    return np.array(rates)


def nca_sf(table):
    """Cases averted from the step functions of observed incidence in both arms."""
    if not table.has_vaccine_arm:
        raise ValidationError("NCA_SF needs vaccine-arm events and person-time")
    r0 = _control_rates(table)
    r1 = []
    for k, iv in enumerate(table.intervals, start=1):
        if iv.t1 <= 0:
            raise DegenerateDataError(f"interval {k}: zero vaccine person-time")
        r1.append(iv.e1 / iv.t1)
    per = 1000.0 * (r0 - np.array(r1)) * table.delta_times
    return NCAResult("sf", float(table.delta_times.sum()), float(per.sum()), tuple(per.tolist()))


def nca_auc(aucs, table):
    """Cases averted as interval AUC times control-arm incidence.

    ``table`` may be control-only, e.g. recent incidence from a target region.
    """
    aucs = np.asarray(aucs, dtype=float)
    if aucs.shape != (len(table),):
        raise ValidationError(f"need one AUC per interval: got {aucs.size} for {len(table)} intervals")
    per = 1000.0 * aucs * _control_rates(table) * table.delta_times
    return NCAResult("auc", float(table.delta_times.sum()), float(per.sum()), tuple(per.tolist()))


def _calendar_order(table):
    idx = [iv.calendar_index for iv in table.intervals]
    if None in idx or sorted(idx) != list(range(1, 13)):
        raise ValidationError("calendar table must cover calendar months 1..12 exactly once")
    by_month = {iv.calendar_index: iv for iv in table.intervals}
    return [by_month[m] for m in range(1, 13)]


def nca_auc_seasonal(aucs, calendar_table, s):
    """Cases averted if vaccination completes at the start of calendar month ``s``.

    Analysis interval ``k`` is paired with calendar month ``s + k - 1``
    (wrapping modulo 12).
    """
    aucs = np.asarray(aucs, dtype=float)
    months = _calendar_order(calendar_table)
    if aucs.size != 12:
        raise ValidationError("seasonal NCA needs 12 interval AUCs (one year)")
    s = int(s)
    start = (s - 1) % 12
    ivs = [months[(start + k) % 12] for k in range(12)]
    for iv in ivs:
        if iv.t0 <= 0:
            raise DegenerateDataError(f"calendar month {iv.calendar_index}: zero control person-time")
    rate = np.array([iv.e0 / iv.t0 for iv in ivs])
    delta = np.array([iv.delta_time for iv in ivs])
    per = 1000.0 * aucs * rate * delta
    return NCAResult("auc_season", float(delta.sum()), float(per.sum()), tuple(per.tolist()), start + 1)


def nca_by_start_month(aucs, calendar_table):
    """Seasonal NCA for every target month ``s = 1..12``."""
    return [nca_auc_seasonal(aucs, calendar_table, s) for s in range(1, 13)]


def nca_auc_age(aucs, calendar_table):
    """Age-based delivery: mean of the seasonal NCA over the 12 start months."""
    seasonal = nca_by_start_month(aucs, calendar_table)
    values = np.array([r.value for r in seasonal])
    per = np.mean([r.per_interval for r in seasonal], axis=0)
    return NCAResult("auc_age", seasonal[0].horizon, float(values.mean()), tuple(per.tolist()))


def nnv(nca):
    """Number needed to vaccinate to prevent one case, ``1000 / NCA``.

    Multiply by 1000 for the number needed to prevent 1000 cases, the more
    natural scale when episodes recur.
    """
    value = nca.value if isinstance(nca, NCAResult) else float(nca)
    if not value > 0:
        raise UndefinedNNVError(f"NNV is undefined for NCA = {value}")
    return 1000.0 / value
