"""Cox-type partial likelihood with a time-varying vaccine effect.

The only covariate is the arm indicator ``z``; a vaccinated subject's
covariate vector at time ``t`` is ``[1]`` (constant family) or ``[1, g(t)]``.
Because controls all share ``x = 0`` and vaccinees all share ``x(t)``, the
risk-set sum at an event time collapses to

    N0(t) + N1(t) * exp(eta(t)),   eta(t) = beta . x(t)

with ``N_a(t)`` the number of arm-``a`` subjects at risk in the stratum.
Ties use the Breslow convention.  Risk sets follow either the Andersen-Gill
rule (subjects stay at risk after an event) or the first-event rule
(subjects leave after their first event).
"""

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .effects import EffectSpec, basis, n_params
from .errors import (
    ConvergenceError,
    DegenerateDataError,
    DomainError,
    NumericalError,
    SeparationWarning,
    ValidationError,
)

__all__ = [
    "BICComparison",
    "FitResult",
    "RULES",
    "compare_bic",
    "fit",
    "log_partial_likelihood",
    "score_and_information",
    "score_residuals",
]

RULES = ("ag", "first_event")


def _check_rule(rule):
    if rule not in RULES:
        raise ValidationError(f"unknown risk-set rule {rule!r}; expected one of {RULES}")


@dataclass
class _Stratum:
    times: np.ndarray    # distinct event times
    d0: np.ndarray       # control events at each time
    d1: np.ndarray       # vaccine events at each time
    n0: np.ndarray       # controls at risk just before each time
    n1: np.ndarray       # vaccinees at risk
    x: np.ndarray        # vaccinee covariate vector at each time, shape (m, p)


@dataclass
class _Prepared:
    family: str
    rule: str
    strata: list
    n_events: int
    n_subjects: int
    # per-subject data for score residuals
    subj_stratum: np.ndarray
    subj_arm: np.ndarray
    subj_exit: np.ndarray
    ev_subject: np.ndarray
    ev_time: np.ndarray
    ev_stratum_pos: np.ndarray  # index of each event's time within its stratum's `times`


def _used_events(ds, rule):
    """Events entering the likelihood and each subject's exit time from the risk set."""
    es, et = ds.event_subject, ds.event_time
    exit_time = ds.censor.astype(float).copy()
    if rule == "first_event" and es.size:
        first = np.ones(es.size, dtype=bool)
        first[1:] = es[1:] != es[:-1]
        es, et = es[first], et[first]
        exit_time[es] = et
    return es, et, exit_time


def _prepare(ds, family, rule):
    _check_rule(rule)
    n_params(family)
    es, et, exit_time = _used_events(ds, rule)
    if family == "log" and (et <= 0).any():
        raise DomainError("log family cannot use events at t = 0")
    labels, codes = ds.strata
    arm = ds.arm
    strata = []
    ev_pos = np.empty(es.size, dtype=np.int64)
    ev_code = codes[es] if es.size else np.empty(0, dtype=np.int64)
    for s in range(len(labels)):
        in_s = ev_code == s
        t_s = et[in_s]
        if t_s.size == 0:
            strata.append(None)
            continue
        times, inv = np.unique(t_s, return_inverse=True)
        ev_pos[in_s] = inv
        a = arm[es[in_s]]
        d1 = np.bincount(inv, weights=(a == 1), minlength=times.size)
        d0 = np.bincount(inv, weights=(a == 0), minlength=times.size)
        members = codes == s
        counts = []
        for arm_value in (0, 1):
            exits = np.sort(exit_time[members & (arm == arm_value)])
            counts.append((exits.size - np.searchsorted(exits, times, side="left")).astype(float))
        n0, n1 = counts
        if ((n0 == 0) & (n1 == 0)).any():
            raise DegenerateDataError(f"stratum {labels[s]!r}: event time with an empty risk set")
        if not ((arm[members] == 0).any() and (arm[members] == 1).any()):
            raise ValidationError(f"stratum {labels[s]!r} contributes events but lacks one of the arms")
        strata.append(_Stratum(times, d0, d1, n0, n1, basis(family, times)))
    return _Prepared(family, rule, strata, int(es.size), len(ds), codes, arm, exit_time, es, et, ev_pos)


def _evaluate(prep, coef, order=2):
    """Log partial likelihood and (optionally) its gradient and negative Hessian."""
    coef = np.asarray(coef, dtype=float)
    p = coef.size
    ll = 0.0
    grad = np.zeros(p)
    info = np.zeros((p, p))
    for st in prep.strata:
        if st is None:
            continue
        eta = st.x @ coef
        # log D = log(n0 + n1 e^eta), computed stably
        with np.errstate(divide="ignore"):
            a = np.log(st.n0)
            b = np.log(st.n1) + eta
        log_den = np.logaddexp(a, b)
        d = st.d0 + st.d1
        ll += float(np.sum(st.d1 * eta) - np.sum(d * log_den))
        if order >= 1:
            prob = np.exp(b - log_den)  # weight of the vaccine arm in the risk set
            grad += st.x.T @ (st.d1 - d * prob)
            if order >= 2:
                w = d * prob * (1.0 - prob)
                info += (st.x * w[:, None]).T @ st.x
    return ll, grad, info


def _ll_bruteforce(ds, family, coef, rule):
    """Subject-by-subject risk-set sums; oracle for the count-based path."""
    es, et, exit_time = _used_events(ds, rule)
    _, codes = ds.strata
    coef = np.asarray(coef, dtype=float)
    total = 0.0
    for j in range(es.size):
        t = et[j]
        at_risk = (exit_time >= t) & (codes == codes[es[j]])
        if not at_risk.any():
            raise DegenerateDataError("event time with an empty risk set")
        xt = basis(family, [t])[0]
        lin = np.where(ds.arm[at_risk] == 1, xt @ coef, 0.0)
        own = xt @ coef if ds.arm[es[j]] == 1 else 0.0
        total += own - math.log(np.exp(lin).sum())
    return total


def log_partial_likelihood(ds, effect, coeffs=None, rule="ag", method="counts"):
    """Log partial likelihood of ``ds`` at the given coefficients.

    ``effect`` is an :class:`EffectSpec` (its coefficients are used when
    ``coeffs`` is None) or a family name.  ``method='bruteforce'`` sums over
    individual risk-set members instead of per-arm counts.
    """
    family = effect.family if isinstance(effect, EffectSpec) else effect
    if coeffs is None:
        coeffs = effect.coefficients
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size != n_params(family):
        raise ValidationError(f"{family} family needs {n_params(family)} coefficient(s)")
    if method == "bruteforce":
        _check_rule(rule)
        return _ll_bruteforce(ds, family, coeffs, rule)
    return _evaluate(_prepare(ds, family, rule), coeffs, order=0)[0]


def score_and_information(ds, effect, coeffs=None, rule="ag"):
    """Gradient and observed information (negative Hessian) of the log partial likelihood."""
    family = effect.family if isinstance(effect, EffectSpec) else effect
    if coeffs is None:
        coeffs = effect.coefficients
    _, grad, info = _evaluate(_prepare(ds, family, rule), coeffs)
    return grad, info


def _score_residuals(prep, coef):
    n, p = prep.n_subjects, coef.size
    resid = np.zeros((n, p))
    # event part: x_i(t) - xbar(t) at each used event of subject i
    for s, st in enumerate(prep.strata):
        if st is None:
            continue
        eta = st.x @ coef
        with np.errstate(divide="ignore"):
            b = np.log(st.n1) + eta
            log_den = np.logaddexp(np.log(st.n0), b)
        prob = np.exp(b - log_den)
        d = st.d0 + st.d1
        xbar = prob[:, None] * st.x

        in_s = np.flatnonzero(prep.subj_stratum[prep.ev_subject] == s)
        pos = prep.ev_stratum_pos[in_s]
        subj = prep.ev_subject[in_s]
        own = np.where((prep.subj_arm[subj] == 1)[:, None], st.x[pos], 0.0)
        np.add.at(resid, subj, own - xbar[pos])

        # compensator: -sum_{t <= exit_i} d(t) exp(eta_i(t)) / D(t) * (x_i(t) - xbar(t))
        comp0 = np.cumsum((d * np.exp(-log_den))[:, None] * (-xbar), axis=0)
        comp1 = np.cumsum((d * np.exp(eta - log_den))[:, None] * (st.x - xbar), axis=0)
        members = np.flatnonzero(prep.subj_stratum == s)
        last = np.searchsorted(st.times, prep.subj_exit[members], side="right") - 1
        has = last >= 0
        members, last = members[has], last[has]
        is1 = prep.subj_arm[members] == 1
        resid[members[is1]] -= comp1[last[is1]]
        resid[members[~is1]] -= comp0[last[~is1]]
    return resid


def score_residuals(ds, effect, coeffs=None, rule="ag"):
    """Per-subject score contributions; they sum to the score vector."""
    family = effect.family if isinstance(effect, EffectSpec) else effect
    if coeffs is None:
        coeffs = effect.coefficients
    return _score_residuals(_prepare(ds, family, rule), np.asarray(coeffs, dtype=float))


@dataclass
class FitResult:
    effect: EffectSpec
    loglik: float
    cov_model: np.ndarray
    cov_robust: np.ndarray
    n_events: int
    n_subjects: int
    iterations: int
    converged: bool
    bic: float
    rule: str = "ag"
    data_signature: str = field(default="", repr=False)

    @property
    def family(self):
        return self.effect.family

    @property
    def coef(self):
        return self.effect.coefficients

    @property
    def se_model(self):
        return np.sqrt(np.clip(np.diag(self.cov_model), 0, None))

    @property
    def se_robust(self):
        return np.sqrt(np.clip(np.diag(self.cov_robust), 0, None))

    def to_dict(self):
        return {
            "family": self.family,
            "rule": self.rule,
            "coef": self.coef.tolist(),
            "se_model": self.se_model.tolist(),
            "se_robust": self.se_robust.tolist(),
            "cov_model": self.cov_model.tolist(),
            "cov_robust": self.cov_robust.tolist(),
            "loglik": self.loglik,
            "bic": self.bic,
            "n_events": self.n_events,
            "n_subjects": self.n_subjects,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d):
        effect = EffectSpec.from_coefficients(d["family"], d["coef"])
        p = len(d["coef"])
        cov_m = np.asarray(d.get("cov_model", np.diag(np.square(d.get("se_model", [np.nan] * p)))), dtype=float)
        cov_r = np.asarray(d.get("cov_robust", np.diag(np.square(d.get("se_robust", [np.nan] * p)))), dtype=float)
        return cls(effect, float(d["loglik"]), cov_m, cov_r, int(d["n_events"]),
                   int(d.get("n_subjects", 0)), int(d["iterations"]), bool(d["converged"]),
                   float(d["bic"]), d.get("rule", "ag"))


def _signature(ds):
    h = hashlib.blake2b(digest_size=12)
    for arr in (ds.arm, ds.censor, ds.event_subject, ds.event_time):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update("\x1f".join(ds.stratum).encode())
    return h.hexdigest()


def _separated(prep):
    d0 = sum(st.d0.sum() for st in prep.strata if st is not None)
    d1 = sum(st.d1.sum() for st in prep.strata if st is not None)
    return d0 == 0 or d1 == 0


def fit(ds, family="linear", rule="ag", max_iter=50, max_halvings=20, ll_tol=1e-9, score_tol=1e-6):
    """Maximise the (stratified) partial likelihood by Newton-Raphson.

    Starts from zero and halves the step while the log likelihood decreases.
    Convergence needs a relative log-likelihood change below ``ll_tol`` and a
    score max-norm below ``score_tol``.

    Raises
    ------
    ConvergenceError
        No convergence within ``max_iter`` iterations (carries the last iterate).
    DegenerateDataError
        No events, or an event time with an empty risk set.

    Warns
    -----
    SeparationWarning
        One arm has no events; the returned fit has ``converged=False``.
    """
    prep = _prepare(ds, family, rule)
    if prep.n_events == 0:
        raise DegenerateDataError("cannot fit a partial likelihood without events")
    separated = _separated(prep)
    if separated:
        warnings.warn("an arm has no events while at risk; the likelihood is monotone", SeparationWarning,
                      stacklevel=2)

    p = n_params(family)
    coef = np.zeros(p)
    ll, grad, info = _evaluate(prep, coef)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            if separated:
                break
            raise NumericalError("singular information matrix") from None
        new = coef + step
        new_ll = _evaluate(prep, new, order=0)[0]
        halvings = 0
        while not new_ll >= ll and halvings < max_halvings:
            step /= 2.0
            new = coef + step
            new_ll = _evaluate(prep, new, order=0)[0]
            halvings += 1
        if not np.isfinite(new_ll):
            raise NumericalError("log partial likelihood became non-finite")
        rel = abs(new_ll - ll) / max(abs(ll), 1e-300)
        coef = new
        ll, grad, info = _evaluate(prep, coef)
        if rel < ll_tol and np.max(np.abs(grad)) < score_tol:
            converged = not separated
            if converged:
                # one polishing step: Newton is quadratic here, so this removes the residual error
                try:
                    polished = coef + np.linalg.solve(info, grad)
                    p_ll, p_grad, p_info = _evaluate(prep, polished)
                    if np.max(np.abs(p_grad)) <= np.max(np.abs(grad)):
                        coef, ll, grad, info = polished, p_ll, p_grad, p_info
                except np.linalg.LinAlgError:
                    pass
            break
    else:
        if not separated:
            raise ConvergenceError(f"Newton-Raphson did not converge in {max_iter} iterations",
                                   last_iterate=coef, iterations=max_iter)

    try:
        cov_model = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov_model = np.full((p, p), np.nan)
    resid = _score_residuals(prep, coef)
    cov_robust = cov_model @ (resid.T @ resid) @ cov_model
    cov_model = (cov_model + cov_model.T) / 2.0
    cov_robust = (cov_robust + cov_robust.T) / 2.0
    bic = -2.0 * ll + p * math.log(prep.n_events)
    return FitResult(
        EffectSpec.from_coefficients(family, coef), float(ll), cov_model, cov_robust,
        prep.n_events, prep.n_subjects, it, converged, bic, rule, _signature(ds),
    )


@dataclass
class BICComparison:
    ranking: list      # (family, bic) in ascending BIC order
    delta: np.ndarray  # delta[i, j] = bic_i - bic_j in the order of the input fits

    def to_dict(self):
        best = self.ranking[0][1]
        return {
            "ranking": [{"family": f, "bic": b, "delta_bic": b - best} for f, b in self.ranking],
            "pairwise_delta_bic": self.delta.tolist(),
        }


def compare_bic(fits):
    """Rank fits of the same data and risk-set rule by BIC."""
    fits = list(fits)
    if not fits:
        raise ValidationError("nothing to compare")
    sigs = {(f.data_signature, f.rule, f.n_events) for f in fits}
    if len(sigs) > 1:
        raise ValidationError("fits do not share the same dataset and risk-set rule")
    bics = np.array([f.bic for f in fits])
    order = np.argsort(bics, kind="stable")
    return BICComparison([(fits[i].family, float(bics[i])) for i in order], bics[:, None] - bics[None, :])
