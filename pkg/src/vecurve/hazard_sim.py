"""Recurrent-event simulation by thinning.

Subject ``i`` has hazard ``lambda0(t) * exp(f(t) * z_i)``.  Candidate times
arrive as a homogeneous Poisson process with rate ``lambda_bar`` (an upper
bound of the hazard on ``[0, C_i]``); a candidate at ``T`` is kept with
probability ``lambda_i(T) / lambda_bar``.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .effects import EffectSpec
from .errors import DomainError, NumericalError, UnsupportedParameterError, ValidationError
from .rng import CounterStream, derive_key, uniforms
from .trial_data import TrialDataset

__all__ = [
    "BaselineHazard",
    "EffectSpec",
    "ScenarioSpec",
    "builtin_scenario",
    "hazard_upper_bound",
    "hazard_value",
    "scenario_from_dict",
    "simulate_subject",
    "simulate_trial",
    "subject_keys",
    "subject_stream",
]

BETA0 = -4.0
BETA1 = 0.33


@dataclass(frozen=True)
class BaselineHazard:
    """Piecewise-constant baseline hazard (events per person-month).

    Segment ``i`` covers ``[breakpoints[i], breakpoints[i+1])``; the last
    segment runs to ``horizon`` inclusive, or indefinitely when ``horizon`` is
    None.
    """

    breakpoints: tuple
    rates: tuple
    horizon: float | None = None

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "rates", rates)
        if not bp or bp[0] != 0.0:
            raise ValidationError("breakpoints must start at 0")
        if any(b <= a for a, b in zip(bp, bp[1:])):
            raise ValidationError("breakpoints must be strictly increasing")
        if len(rates) != len(bp):
            raise ValidationError("need exactly one rate per segment")
        if any(not math.isfinite(r) or r < 0 for r in rates):
            raise ValidationError("rates must be finite and >= 0")
        if self.horizon is not None and not self.horizon > bp[-1]:
            raise ValidationError("horizon must lie beyond the last breakpoint")

    @classmethod
    def constant(cls, rate, horizon=None):
        return cls((0.0,), (rate,), horizon)

    @property
    def is_constant(self):
        return len(set(self.rates)) == 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or (self.horizon is not None and np.any(t > self.horizon)):
            raise DomainError(f"baseline hazard evaluated outside [0, {self.horizon}]")
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        out = np.asarray(self.rates)[idx]
        return out if out.ndim else float(out)

    def max_rate(self, upto):
        """Largest segment rate on ``[0, upto]``."""
        n = int(np.searchsorted(self.breakpoints, upto, side="right"))
        return max(self.rates[:max(n, 1)])

    def cumulative(self, t):
        """Integrated hazard from 0 to ``t``."""
        bp = np.append(self.breakpoints, np.inf)
        total = 0.0
        for lo, hi, r in zip(bp[:-1], bp[1:], self.rates):
            if t > lo:
                total += r * (min(t, hi) - lo)
        return total

    def to_dict(self):
        return {"breakpoints": list(self.breakpoints), "rates": list(self.rates)}


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulated trial configuration.

    ``censoring`` is ``("fixed", tau)`` or ``("uniform", a, b)``.
    """

    tau: float
    n_per_arm: int
    censoring: tuple
    baseline: BaselineHazard
    effect: EffectSpec
    scenario_id: object = "custom"
    vaccination_month: int = 1
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError("tau must be > 0")
        if int(self.n_per_arm) != self.n_per_arm or self.n_per_arm <= 0:
            raise ValidationError("n_per_arm must be a positive integer")
        kind = self.censoring[0]
        if kind == "fixed":
            if len(self.censoring) != 2 or not 0 < self.censoring[1] <= self.tau:
                raise ValidationError("fixed censoring time must be in (0, tau]")
        elif kind == "uniform":
            _, a, b = self.censoring
            if not 0 < a < b <= self.tau:
                raise ValidationError("uniform censoring needs 0 < a < b <= tau")
        else:
            raise ValidationError(f"unknown censoring type {kind!r}")
        if not 1 <= self.vaccination_month <= 12:
            raise ValidationError("vaccination_month must be in 1..12")
        if self.baseline.horizon is None:
            object.__setattr__(self, "baseline", replace(self.baseline, horizon=self.tau))
        elif self.baseline.horizon < self.tau:
            raise ValidationError("baseline hazard must cover [0, tau]")

    @property
    def is_seasonal(self):
        return not self.baseline.is_constant

    def to_dict(self):
        cens = (
            {"type": "fixed", "time": self.censoring[1]} if self.censoring[0] == "fixed"
            else {"type": "uniform", "a": self.censoring[1], "b": self.censoring[2]}
        )
        out = {
            "scenario_id": self.scenario_id,
            "tau": self.tau,
            "n_per_arm": self.n_per_arm,
            "censoring": cens,
            "baseline": self.baseline.to_dict(),
            "effect": self.effect.to_dict(),
            "vaccination_month": self.vaccination_month,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out


def scenario_from_dict(d):
    """Parse the scenario JSON object (see README for the schema)."""
    try:
        tau = float(d["tau"])
        cens = d.get("censoring", {"type": "fixed"})
        if cens["type"] == "fixed":
            censoring = ("fixed", float(cens.get("time", tau)))
        elif cens["type"] == "uniform":
            censoring = ("uniform", float(cens["a"]), float(cens["b"]))
        else:
            raise ValidationError(f"unknown censoring type {cens['type']!r}")
        base = d["baseline"]
        baseline = BaselineHazard(base["breakpoints"], base["rates"], base.get("horizon", tau))
        eff = d["effect"]
        effect = EffectSpec(eff["family"], float(eff["beta0"]),
                            None if eff.get("beta1") is None else float(eff["beta1"]))
        return ScenarioSpec(
            tau, int(d.get("n_per_arm", 1000)), censoring, baseline, effect,
            d.get("scenario_id", "custom"), int(d.get("vaccination_month", 1)), d.get("seed"),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scenario JSON: {exc!r}") from None


def load_scenario_json(path):
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


LAMBDA_LOW = ((0.0, 6.0), (0.1, 0.2))
LAMBDA_HIGH = ((0.0, 6.0), (0.2, 0.1))

_TABLE1 = {
    1: (12.0, ("fixed", 12.0), ((0.0,), (0.15,))),
    2: (10.0, ("fixed", 10.0), ((0.0,), (0.15,))),
    3: (12.0, ("uniform", 7.2, 12.0), ((0.0,), (0.15,))),
    4: (10.0, ("uniform", 6.0, 10.0), ((0.0,), (0.15,))),
    5: (12.0, ("fixed", 12.0), LAMBDA_LOW),
    6: (12.0, ("fixed", 12.0), LAMBDA_HIGH),
    7: (12.0, ("uniform", 7.2, 12.0), LAMBDA_LOW),
    8: (12.0, ("uniform", 7.2, 12.0), LAMBDA_HIGH),
}


def builtin_scenario(scenario_id, n_per_arm=1000):
    """The eight simulation scenarios: durations, attrition and seasonal baselines."""
    try:
        tau, censoring, (bp, rates) = _TABLE1[int(scenario_id)]
    except (KeyError, ValueError):
        raise ValidationError(f"unknown built-in scenario {scenario_id!r}; expected 1..8") from None
    return ScenarioSpec(
        tau, n_per_arm, censoring, BaselineHazard(bp, rates, tau),
        EffectSpec("linear", BETA0, BETA1), int(scenario_id),
    )


def hazard_value(baseline, effect, arm, t):
    """``lambda0(t)`` for the control arm, ``lambda0(t) * exp(f(t))`` for the vaccine arm."""
    base = baseline(t)
    if arm == 0:
        return base
    if arm != 1:
        raise ValidationError("arm must be 0 or 1")
    return base * np.exp(effect.log_hr(t))


def _multiplier_sup(effect, horizon):
    # all families are monotone in t, so the sup is at an endpoint
    if effect.family == "constant" or effect.slope == 0:
        return math.exp(effect.beta0)
    if effect.family == "log":
        if effect.beta1 < 0:
            raise UnsupportedParameterError("log family with beta1 < 0 has an unbounded hazard near t = 0")
        return math.exp(effect.log_hr(horizon))
    return math.exp(max(effect.log_hr(0.0), effect.log_hr(horizon)))


def hazard_upper_bound(baseline, effect, arm, horizon):
    """A finite rate that dominates the subject's hazard on ``[0, horizon]``."""
    top = baseline.max_rate(horizon)
    if arm == 0:
        return top
    return top * _multiplier_sup(effect, horizon)


def _upper_bounds(baseline, effect, arm, horizon):
    """Vectorised :func:`hazard_upper_bound` over subjects."""
    seg = np.searchsorted(baseline.breakpoints, horizon, side="right") - 1
    top = np.maximum.accumulate(np.asarray(baseline.rates))[np.maximum(seg, 0)]
    if effect.family == "constant" or effect.slope == 0:
        mult = np.full(horizon.shape, math.exp(effect.beta0))
    elif effect.family == "log":
        if effect.beta1 < 0:
            raise UnsupportedParameterError("log family with beta1 < 0 has an unbounded hazard near t = 0")
        mult = np.exp(effect.log_hr(horizon))
    else:
        mult = np.exp(np.maximum(effect.log_hr(0.0), effect.log_hr(horizon)))
    return np.where(arm == 1, top * mult, top)


def simulate_subject(baseline, effect, arm, censor_time, rng, lambda_bar=None):
    """Event times of one subject on ``(0, censor_time]`` by thinning.

    ``rng`` is anything with a ``random()`` method returning U(0, 1) floats
    (a :class:`numpy.random.Generator` or a :class:`~vecurve.rng.CounterStream`).
    """
    if not censor_time > 0:
        raise ValidationError("censor_time must be > 0")
    if lambda_bar is None:
        lambda_bar = hazard_upper_bound(baseline, effect, arm, censor_time)
    if not lambda_bar > 0:
        if hazard_upper_bound(baseline, effect, arm, censor_time) > 0:
            raise NumericalError("non-positive lambda_bar with a positive hazard")
        return []
    events = []
    t = 0.0
    while True:
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        t += -math.log(u) / lambda_bar
        if t > censor_time:
            return events
        v = rng.random()
        ratio = hazard_value(baseline, effect, arm, t) / lambda_bar
        assert ratio <= 1.0 + 1e-12, "hazard exceeded its thinning bound"
        if v <= ratio:
            events.append(t)


def subject_keys(seed, scenario_id, replicate, n_subjects):
    """Stream key of every subject of one simulated trial."""
    return derive_key(0 if seed is None else seed, scenario_id, replicate, np.arange(n_subjects))


def _censor_times(spec, keys):
    # draw 0 of each subject stream is reserved for the censoring time
    u = uniforms(keys, 0)
    if spec.censoring[0] == "fixed":
        return np.full(keys.size, float(spec.censoring[1]))
    _, a, b = spec.censoring
    return a + (b - a) * u


def _thin_all(baseline, effect, arm, censor, keys, lambda_scale=1.0):
    """Vectorised thinning, draw-for-draw identical to :func:`simulate_subject`.

    Candidate ``j`` of a subject uses stream draws ``1 + 2j`` (gap) and
    ``2 + 2j`` (acceptance).
    """
    n = keys.size
    lam_bar = _upper_bounds(baseline, effect, arm, censor) * lambda_scale
    t = np.zeros(n)
    active = np.flatnonzero(lam_bar > 0)
    out_subj, out_time = [], []
    j = 0
    while active.size:
        t[active] += -np.log(uniforms(keys[active], 1 + 2 * j)) / lam_bar[active]
        active = active[t[active] <= censor[active]]
        if active.size:
            tt = t[active]
            rate = baseline(tt) * np.where(arm[active] == 1, np.exp(_log_hr(effect, tt)), 1.0)
            ratio = rate / lam_bar[active]
            assert (ratio <= 1.0 + 1e-12).all(), "hazard exceeded its thinning bound"
            accept = uniforms(keys[active], 2 + 2 * j) <= ratio
            out_subj.append(active[accept])
            out_time.append(tt[accept])
        j += 1
    if not out_subj:
        return np.empty(0, dtype=np.int64), np.empty(0)
    return np.concatenate(out_subj), np.concatenate(out_time)


def _log_hr(effect, t):
    if effect.family == "log":
        return effect.log_hr(np.maximum(t, np.finfo(float).tiny))
    return effect.log_hr(t)


def simulate_trial(spec, seed, replicate=0, lambda_scale=1.0):
    """Simulate one trial of ``spec``.

    Subjects ``0 .. n-1`` are controls and ``n .. 2n-1`` vaccinated; each has its
    own substream derived from ``(seed, spec.scenario_id, replicate, index)``.
    ``lambda_scale`` inflates the thinning bound (distribution unchanged).
    """
    n = int(spec.n_per_arm)
    keys = subject_keys(seed, spec.scenario_id, replicate, 2 * n)
    arm = np.repeat(np.array([0, 1], dtype=np.int8), n)
    censor = _censor_times(spec, keys)
    ev_subj, ev_time = _thin_all(spec.baseline, spec.effect, arm, censor, keys, lambda_scale)
    ids = [f"s{i:05d}" for i in range(2 * n)]
    return TrialDataset(
        ids, arm, ["1"] * (2 * n), censor, ev_subj, ev_time,
        np.full(2 * n, spec.vaccination_month, dtype=np.int8), validate=False,
    )


def subject_stream(seed, scenario_id, replicate, subject_index):
    """Sequential stream of one subject, positioned after its censoring draw."""
    key = derive_key(0 if seed is None else seed, scenario_id, replicate, np.array([subject_index]))[0]
    return CounterStream(key, position=1)
