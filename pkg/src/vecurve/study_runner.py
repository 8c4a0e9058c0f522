"""Monte Carlo replication of the simulation study.

Each replicate simulates a trial, fits the proportional-hazards and the
linear time-varying Andersen-Gill models, and derives VE, AUC and NCA
estimates.  Replicates are independent work units; results are aggregated
in replicate order so summaries do not depend on ``jobs``.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ag_estimator import fit
from .errors import NumericalError, SeparationWarning
from .hazard_sim import builtin_scenario, simulate_trial
from .impact_metrics import nca_auc, nca_auc_age, nca_auc_seasonal, nca_sf
from .trial_data import tabulate_calendar_incidence, tabulate_incidence
from .ve_metrics import auc_closed_form, interval_aucs

__all__ = ["METRICS", "StudySummary", "render_table2", "render_table3", "run_replicate",
           "run_scenario", "run_table1_study", "season_start_month"]

METRICS = (
    "beta_ph", "ve_ph", "beta0", "beta1", "auc_0_12", "auc_0_10",
    "nca_sf_12", "nca_sf_10", "nca_auc_12", "nca_auc_10", "nca_auc_season_12", "nca_auc_age_12",
)

FAILURE_FLAG_FRACTION = 0.01


def season_start_month(spec):
    """Calendar month in which the highest-incidence baseline segment starts."""
    rates = np.asarray(spec.baseline.rates)
    start = spec.baseline.breakpoints[int(np.argmax(rates))]
    return (spec.vaccination_month - 1 + int(math.floor(start))) % 12 + 1


def _deltas(horizon):
    # three-month intervals; the last one is shortened to end at the horizon
    edges = list(np.arange(0.0, horizon, 3.0)) + [horizon]
    return [b - a for a, b in zip(edges[:-1], edges[1:])]


def run_replicate(spec, base_seed, replicate, season_month=None):
    """Estimates from one simulated trial, or None when a fit fails."""
    ds = simulate_trial(spec, base_seed, replicate)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", SeparationWarning)
            ph = fit(ds, "constant", "ag")
            tv = fit(ds, "linear", "ag")
    except (NumericalError, SeparationWarning):
        return None
    if not (ph.converged and tv.converged):
        return None

    out = dict.fromkeys(METRICS, None)
    out["beta_ph"] = float(ph.coef[0])
    out["ve_ph"] = 1.0 - math.exp(ph.coef[0])
    out["beta0"], out["beta1"] = (float(c) for c in tv.coef)
    out["auc_0_12"] = auc_closed_form(tv.effect, 0.0, 12.0).value
    out["auc_0_10"] = auc_closed_form(tv.effect, 0.0, 10.0).value

    for horizon in (12.0, 10.0):
        if horizon > spec.tau:
            continue
        deltas = _deltas(horizon)
        table = tabulate_incidence(ds, deltas)
        key = f"{int(horizon)}"
        out[f"nca_sf_{key}"] = nca_sf(table).value
        out[f"nca_auc_{key}"] = nca_auc(interval_aucs(tv.effect, deltas), table).value

    if spec.is_seasonal and spec.tau >= 12.0:
        calendar = tabulate_calendar_incidence(ds, horizon=12.0)
        monthly = interval_aucs(tv.effect, [1.0] * 12)
        s = season_month or season_start_month(spec)
        out["nca_auc_season_12"] = nca_auc_seasonal(monthly, calendar, s).value
        out["nca_auc_age_12"] = nca_auc_age(monthly, calendar).value
    return out


def _run_chunk(args):
    spec, base_seed, replicates, season_month = args
    return [run_replicate(spec, base_seed, r, season_month) for r in replicates]


@dataclass
class StudySummary:
    scenario_id: object
    n_replicates: int
    n_failed_fits: int
    means: dict
    mc_se: dict
    tau: float = 12.0
    season_month: int | None = None
    flagged: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        def clean(d):
            return {k: (None if v is None or not math.isfinite(v) else v) for k, v in d.items()}
        return {
            "scenario_id": self.scenario_id,
            "tau": self.tau,
            "n_replicates": self.n_replicates,
            "n_failed_fits": self.n_failed_fits,
            "flagged": self.flagged,
            "season_month": self.season_month,
            "means": clean(self.means),
            "mc_se": clean(self.mc_se),
            **self.extra,
        }


def _summarise(spec, results, season_month):
    ok = [r for r in results if r is not None]
    means, ses = {}, {}
    for m in METRICS:
        vals = np.array([r[m] for r in ok if r[m] is not None], dtype=float)
        if vals.size == 0:
            means[m] = ses[m] = None
            continue
        total = 0.0
        for v in vals:  # fixed accumulation order
            total += v
        means[m] = total / vals.size
        ses[m] = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
    failed = len(results) - len(ok)
    return StudySummary(
        spec.scenario_id, len(results), failed, means, ses, spec.tau,
        season_month if spec.is_seasonal else None,
        flagged=failed > FAILURE_FLAG_FRACTION * len(results),
    )


def run_scenario(spec, n_replicates, base_seed=0, jobs=1, season_month=None):
    """Simulate and analyse ``n_replicates`` trials of ``spec``."""
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    if spec.is_seasonal and season_month is None:
        season_month = season_start_month(spec)
    if jobs <= 1:
        results = _run_chunk((spec, base_seed, range(n_replicates), season_month))
    else:
        bounds = np.linspace(0, n_replicates, min(jobs * 4, n_replicates) + 1).astype(int)
        chunks = [(spec, base_seed, range(a, b), season_month) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for part in pool.map(_run_chunk, chunks) for r in part]
    return _summarise(spec, results, season_month)


def run_table1_study(n_replicates, base_seed=0, scenarios=range(1, 9), jobs=1, n_per_arm=1000):
    """Run the built-in scenarios; NCA up to 12 months is absent for the 10-month ones."""
    return [run_scenario(builtin_scenario(s, n_per_arm), n_replicates, base_seed, jobs) for s in scenarios]


def _pct(v):
    return "" if v is None else f"{100.0 * v:.1f}"


def _num(v, fmt):
    return "" if v is None else format(v, fmt)


def render_table2(summaries):
    """Text table: PH estimates, time-varying estimates and AUCs (percent)."""
    head = f"{'Scenario':>8}  {'beta':>7}  {'VE(%)':>6}  {'beta0':>7}  {'beta1':>7}  {'AUC0-12(%)':>11}  {'AUC0-10(%)':>11}"
    lines = [head, "-" * len(head)]
    for s in summaries:
        m = s.means
        a12 = _pct(m["auc_0_12"]) + ("b" if s.tau < 12 else "")
        a10 = _pct(m["auc_0_10"]) + ("a" if s.tau > 10 else "")
        lines.append(
            f"{s.scenario_id!s:>8}  {_num(m['beta_ph'], '.2f'):>7}  {_pct(m['ve_ph']):>6}  "
            f"{_num(m['beta0'], '.2f'):>7}  {_num(m['beta1'], '.3f'):>7}  {a12:>11}  {a10:>11}"
        )
    lines.append("a: interpolated from a curve fitted on 12-month data; b: extrapolated from 10-month data")
    return "\n".join(lines)


def render_table3(summaries):
    """Text table: NCA per 1000 persons up to 10 and 12 months."""
    cols = [("NCA_SF(12)", "nca_sf_12"), ("NCA_SF(10)", "nca_sf_10"), ("NCA_AUC(12)", "nca_auc_12"),
            ("NCA_AUC(10)", "nca_auc_10"), ("NCA_season(12)", "nca_auc_season_12"),
            ("NCA_age(12)", "nca_auc_age_12")]
    head = f"{'Scenario':>8}  " + "  ".join(f"{c:>14}" for c, _ in cols)
    lines = [head, "-" * len(head)]
    for s in summaries:
        lines.append(f"{s.scenario_id!s:>8}  " + "  ".join(f"{_num(s.means[k], '.1f'):>14}" for _, k in cols))
    return "\n".join(lines)
