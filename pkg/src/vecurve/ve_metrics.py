"""Vaccine efficacy curves and the area under them.

``VE(t) = 1 - exp(f(t))``.  The AUC over ``[t1, t2]`` is the mean of ``VE``
over the interval, i.e. the proportion of the interval's area lying below
the curve.
"""

import math
from dataclasses import dataclass

import numpy as np

from .effects import EffectSpec
from .errors import DomainError, UnsupportedParameterError, ValidationError

__all__ = [
    "AUCValue",
    "CrossDurationAUC",
    "VECurve",
    "auc",
    "auc_closed_form",
    "auc_cross_duration",
    "auc_quadrature",
    "bootstrap_auc_interval",
    "interval_aucs",
    "ve_at",
    "ve_confidence_interval",
    "ve_grid",
]


@dataclass(frozen=True)
class VECurve:
    effect: EffectSpec

    def hr(self, t):
        return self.effect.hr(t)

    def ve(self, t):
        return 1.0 - self.effect.hr(t)

    @classmethod
    def from_fit(cls, fit_result):
        return cls(fit_result.effect)


def _effect(curve):
    return curve.effect if isinstance(curve, VECurve) else curve


@dataclass(frozen=True)
class AUCValue:
    t1: float
    t2: float
    value: float

    @property
    def percent(self):
        return 100.0 * self.value

    def to_dict(self):
        return {"t1": self.t1, "t2": self.t2, "auc": self.value}


def ve_at(curve, t):
    """``1 - exp(f(t))``; the log family is undefined at ``t = 0``."""
    effect = _effect(curve)
    if np.any(np.asarray(t) < 0):
        raise DomainError("VE is defined for t >= 0")
    return 1.0 - effect.hr(t)


def ve_grid(curve, horizon, step=0.1, start=0.0):
    """Evaluation grid for plotting; the log family starts at ``step`` instead of 0."""
    effect = _effect(curve)
    n = int(round((horizon - start) / step))
    t = start + step * np.arange(n + 1)
    if effect.family == "log":
        t = t[t > 0]
    return t, ve_at(effect, t)


def _check_interval(t1, t2):
    if not (math.isfinite(t1) and math.isfinite(t2)):
        raise ValidationError("interval end points must be finite")
    if t1 < 0:
        raise DomainError("AUC interval must start at t >= 0")
    if not t1 < t2:
        raise ValidationError(f"AUC interval needs t1 < t2, got [{t1}, {t2}]")


def auc_closed_form(curve, t1, t2):
    """Exact AUC for the constant, linear and log families."""
    effect = _effect(curve)
    _check_interval(t1, t2)
    b0, b1 = effect.beta0, effect.slope
    width = t2 - t1
    if effect.family == "constant" or b1 == 0.0:
        value = 1.0 - math.exp(b0)
    elif effect.family == "linear":
        area = (t2 - math.exp(b0 + b1 * t2) / b1) - (t1 - math.exp(b0 + b1 * t1) / b1)
        value = area / width
    elif effect.family == "log":
        if b1 <= -1.0:
            raise UnsupportedParameterError("log-family AUC needs beta1 > -1")
        k = b1 + 1.0
        value = 1.0 - math.exp(b0) * (t2 ** k - t1 ** k) / (k * width)
    else:
        raise UnsupportedParameterError(f"no closed form for the {effect.family} family; use auc_quadrature")
    return AUCValue(float(t1), float(t2), value)


def _simpson(y, h):
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def auc_quadrature(curve, t1, t2, n_panels=1024):
    """Composite Simpson estimate of the AUC.

    The rule runs in a variable in which the integrand is smooth: ``u = sqrt(t)``
    for the sqrt family and for the log family on intervals starting at 0, and
    ``u = ln(t)`` for the log family when ``t1 > 0``.  At ``t = 0`` the log
    family's integrand takes its limiting value.
    """
    effect = _effect(curve)
    _check_interval(t1, t2)
    if n_panels < 2 or n_panels % 2:
        raise ValidationError("n_panels must be a positive even number")
    fam = effect.family
    if fam == "log" and t1 > 0:
        u = np.linspace(math.log(t1), math.log(t2), n_panels + 1)
        t = np.exp(u)
        y = (1.0 - effect.hr(t)) * t
    elif fam in ("sqrt", "log"):
        if fam == "log" and t1 == 0 and effect.beta1 < 0:
            raise UnsupportedParameterError("log-family VE is unbounded at t = 0 for beta1 < 0; use auc_closed_form")
        u = np.linspace(math.sqrt(t1), math.sqrt(t2), n_panels + 1)
        t = u * u
        if fam == "log":
            hr = np.empty_like(t)
            pos = t > 0
            hr[pos] = effect.hr(t[pos])
            hr[~pos] = 0.0 if effect.beta1 > 0 else math.exp(effect.beta0)
        else:
            hr = effect.hr(t)
        y = (1.0 - hr) * 2.0 * u
    else:
        u = np.linspace(t1, t2, n_panels + 1)
        y = 1.0 - effect.hr(u)
    h = (u[-1] - u[0]) / n_panels
    return AUCValue(float(t1), float(t2), float(_simpson(y, h)) / (t2 - t1))


def auc(curve, t1, t2):
    """Closed form where one exists, Simpson quadrature otherwise."""
    if _effect(curve).family == "sqrt":
        return auc_quadrature(curve, t1, t2)
    return auc_closed_form(curve, t1, t2)


def interval_aucs(curve, delta_times, start=0.0):
    """AUC on each consecutive interval of the given lengths, starting at ``start``."""
    delta = np.asarray(delta_times, dtype=float)
    if delta.size == 0 or (delta <= 0).any():
        raise ValidationError("delta_times must be non-empty and > 0")
    edges = start + np.concatenate([[0.0], np.cumsum(delta)])
    return [auc(curve, float(a), float(b)).value for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class CrossDurationAUC(AUCValue):
    fitted_horizon: float = float("nan")
    mode: str = "same"  # 'interpolation', 'extrapolation' or 'same'

    def to_dict(self):
        return {**super().to_dict(), "fitted_horizon": self.fitted_horizon, "mode": self.mode}


def auc_cross_duration(curve, fitted_horizon, horizon):
    """AUC over ``[0, horizon]`` from a curve fitted on data up to ``fitted_horizon``."""
    base = auc(curve, 0.0, horizon)
    if horizon < fitted_horizon:
        mode = "interpolation"
    elif horizon > fitted_horizon:
        mode = "extrapolation"
    else:
        mode = "same"
    return CrossDurationAUC(base.t1, base.t2, base.value, float(fitted_horizon), mode)


def ve_confidence_interval(fit_result, robust=True, z=1.959963984540054):
    """Wald interval for a constant-family VE: ``1 - exp(beta -/+ z * SE)``."""
    if fit_result.family != "constant":
        raise ValidationError("a single VE interval needs a constant-family fit")
    beta = fit_result.coef[0]
    se = (fit_result.se_robust if robust else fit_result.se_model)[0]
    return 1.0 - math.exp(beta + z * se), 1.0 - math.exp(beta - z * se)


def bootstrap_auc_interval(ds, family, t1, t2, n_boot=500, seed=0, rule="ag", level=0.95):
    """Percentile interval for the AUC by resampling subjects with replacement.

    Not part of the original method (which reports point estimates only);
    resampling is stratified by arm so both arms stay present.
    """
    from .ag_estimator import fit

    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(ds.arm == a) for a in (0, 1)]
    values = []
    for _ in range(n_boot):
        idx = np.concatenate([rng.choice(g, size=g.size, replace=True) for g in groups])
        boot = ds.subset(idx)
        boot = type(boot)([f"b{i}" for i in range(idx.size)], boot.arm, boot.stratum, boot.censor,
                          boot.event_subject, boot.event_time, boot.vaccination_month, validate=False)
        values.append(auc(fit(boot, family, rule).effect, t1, t2).value)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
