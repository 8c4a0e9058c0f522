"""Command-line interface.

Exit status: 0 success, 2 invalid input, 3 numerical failure.  Errors are
written to stderr as one JSON object.  Every output carries a provenance
block (tool version, command line, resolved configuration including seed);
CSV outputs carry it as leading ``#`` comment lines.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

from . import __version__
from .ag_estimator import FitResult, compare_bic, fit
from .effects import FAMILIES, EffectSpec
from .errors import NumericalError, ValidationError
from .hazard_sim import builtin_scenario, load_scenario_json, simulate_trial
from .impact_metrics import nca_auc, nca_auc_age, nca_auc_seasonal, nca_by_start_month, nca_sf, nnv
from .study_runner import render_table2, render_table3, run_scenario
from .trial_data import (
    read_events_csv,
    read_incidence_csv,
    tabulate_calendar_incidence,
    tabulate_incidence,
    write_events_csv,
)
from .ve_metrics import (
    auc,
    auc_closed_form,
    auc_cross_duration,
    auc_quadrature,
    interval_aucs,
    ve_confidence_interval,
    ve_grid,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

SCHEMAS = """\
file formats:
  events CSV      subject_id,arm,stratum,start,stop,status[,vaccination_month]
                  arm/status in {0,1}; times in decimal months; records of a
                  subject tile [0, censor time]; '#' lines are comments
  incidence CSV   calendar_index,delta_time,e0,t0,e1,t1  (e1,t1 may be empty)
  scenario JSON   {"tau":12,"n_per_arm":1000,
                   "censoring":{"type":"uniform","a":7.2,"b":12},
                   "baseline":{"breakpoints":[0,6],"rates":[0.1,0.2]},
                   "effect":{"family":"linear","beta0":-4,"beta1":0.33},"seed":1}
  fit JSON        {"family","coef","se_model","se_robust","loglik","bic",
                   "n_events","converged","iterations",...}
"""


def _parse_floats(text):
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise ValidationError("empty number list")
    return values


def parse_scenarios(text):
    """``"1-8"`` or ``"1,3,5-6"`` -> list of ints."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _provenance(argv, config):
    return {"tool": "vecurve", "version": __version__, "command": ["vecurve", *argv], "config": config}


def _comments(prov):
    return [
        f"vecurve {prov['version']}",
        "command: " + " ".join(prov["command"]),
        "config: " + json.dumps(prov["config"], sort_keys=True),
    ]


def _open_out(path):
    if path in (None, "-"):
        return _NoClose(sys.stdout)
    return open(path, "w", newline="", encoding="utf-8")


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()


def _write_json(obj, path):
    with _open_out(path) as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _read_events(path):
    if path == "-":
        return read_events_csv(sys.stdin)
    return read_events_csv(path)


def _add_curve_args(p):
    g = p.add_argument_group("efficacy curve (from --fit or explicit coefficients)")
    g.add_argument("--fit", dest="fit_json", help="fit JSON produced by 'vecurve fit'")
    g.add_argument("--family", choices=FAMILIES)
    g.add_argument("--beta0", type=float)
    g.add_argument("--beta1", type=float)


def _curve(args):
    if args.fit_json:
        with open(args.fit_json, encoding="utf-8") as fh:
            return FitResult.from_dict(json.load(fh)).effect
    if args.family is None or args.beta0 is None:
        raise ValidationError("give --fit or --family/--beta0[/--beta1]")
    return EffectSpec(args.family, args.beta0, args.beta1)


def cmd_simulate(args, argv):
    if (args.scenario is None) == (args.scenario_json is None):
        raise ValidationError("give exactly one of --scenario or --scenario-json")
    if args.scenario is not None:
        spec = builtin_scenario(args.scenario, args.n_per_arm or 1000)
    else:
        spec = load_scenario_json(args.scenario_json)
        if args.n_per_arm:
            spec = dataclasses.replace(spec, n_per_arm=args.n_per_arm)
    seed = args.seed if args.seed is not None else (spec.seed if spec.seed is not None else 0)
    ds = simulate_trial(spec, seed, args.replicate)
    config = {"scenario": spec.to_dict(), "seed": seed, "replicate": args.replicate}
    with _open_out(args.out) as fh:
        write_events_csv(ds, fh, _comments(_provenance(argv, config)))
    return EXIT_OK


def cmd_fit(args, argv):
    ds = _read_events(args.events)
    families = args.family or ["linear"]
    fits = [fit(ds, fam, args.rule) for fam in families]
    config = {"events": args.events, "families": families, "rule": args.rule}
    results = []
    for f in fits:
        d = f.to_dict()
        if f.family == "constant":
            d["ve"] = 1.0 - math.exp(f.coef[0])
            d["ve_ci_robust"] = list(ve_confidence_interval(f, robust=True))
            d["ve_ci_model"] = list(ve_confidence_interval(f, robust=False))
        results.append(d)
    if len(fits) == 1:
        out = {**results[0], "provenance": _provenance(argv, config)}
    else:
        out = {"fits": results, "bic_comparison": compare_bic(fits).to_dict(),
               "provenance": _provenance(argv, config)}
    _write_json(out, args.out)
    return EXIT_OK


def cmd_auc(args, argv):
    effect = _curve(args)
    config = {"effect": effect.to_dict(), "method": args.method}
    if args.intervals:
        deltas = _parse_floats(args.intervals)
        values = interval_aucs(effect, deltas, start=args.t1)
        out = {"intervals": deltas, "auc": values, "auc_percent": [f"{100 * v:.1f}" for v in values]}
        config["intervals"] = deltas
    else:
        if args.t2 is None:
            raise ValidationError("give --t2 (or --intervals)")
        if args.fitted_horizon is not None and args.t1 == 0:
            res = auc_cross_duration(effect, args.fitted_horizon, args.t2)
        elif args.method == "closed":
            res = auc_closed_form(effect, args.t1, args.t2)
        elif args.method == "quadrature":
            res = auc_quadrature(effect, args.t1, args.t2, args.panels)
        else:
            res = auc(effect, args.t1, args.t2)
        out = {**res.to_dict(), "auc_percent": f"{res.percent:.1f}"}
        config.update(t1=args.t1, t2=args.t2, fitted_horizon=args.fitted_horizon)
    out["provenance"] = _provenance(argv, config)
    _write_json(out, args.out)
    return EXIT_OK


def _calendar_table(args):
    if args.incidence:
        return read_incidence_csv(args.incidence)
    if args.events:
        return tabulate_calendar_incidence(_read_events(args.events), horizon=args.horizon)
    raise ValidationError("give --incidence or --events")


def cmd_nca(args, argv):
    config = {"variant": args.variant}
    if args.variant in ("sf", "auc"):
        if args.incidence:
            table = read_incidence_csv(args.incidence)
        elif args.events:
            deltas = _parse_floats(args.intervals)
            table = tabulate_incidence(_read_events(args.events), deltas)
            config["intervals"] = deltas
        else:
            raise ValidationError("give --incidence or --events")
        if args.variant == "sf":
            result = nca_sf(table)
        else:
            effect = _curve(args)
            config["effect"] = effect.to_dict()
            result = nca_auc(interval_aucs(effect, table.delta_times), table)
    else:
        effect = _curve(args)
        config["effect"] = effect.to_dict()
        table = _calendar_table(args)
        aucs = interval_aucs(effect, [1.0] * 12)
        if args.variant == "auc_season":
            if args.s is None:
                raise ValidationError("auc_season needs --s (target calendar month)")
            result = nca_auc_seasonal(aucs, table, args.s)
        else:
            result = nca_auc_age(aucs, table)
    out = result.to_dict()
    out["value_rounded"] = round(result.value)
    out["per_interval_rounded"] = [round(v) for v in result.per_interval]
    if result.value > 0:
        out["nnv_per_1000_cases"] = 1000.0 * nnv(result)
    out["provenance"] = _provenance(argv, config)
    _write_json(out, args.out)
    return EXIT_OK


def cmd_ve_curve(args, argv):
    effect = _curve(args)
    t, ve = ve_grid(effect, args.horizon, args.step)
    prov = _provenance(argv, {"effect": effect.to_dict(), "horizon": args.horizon, "step": args.step})
    with _open_out(args.out) as fh:
        for line in _comments(prov):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ve"])
        for a, b in zip(t, ve):
            w.writerow([f"{a:.10g}", repr(float(b))])
    return EXIT_OK


def cmd_nca_by_start(args, argv):
    effect = _curve(args)
    table = _calendar_table(args)
    results = nca_by_start_month(interval_aucs(effect, [1.0] * 12), table)
    prov = _provenance(argv, {"effect": effect.to_dict()})
    with _open_out(args.out) as fh:
        for line in _comments(prov):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_month", "nca"])
        for r in results:
            w.writerow([r.s, repr(r.value)])
    return EXIT_OK


def cmd_study(args, argv):
    scenarios = parse_scenarios(args.scenarios)
    for s in scenarios:
        builtin_scenario(s)
    os.makedirs(args.out_dir, exist_ok=True)
    summaries = []
    for s in scenarios:
        summary = run_scenario(builtin_scenario(s, args.n_per_arm), args.replicates, args.seed, args.jobs)
        summaries.append(summary)
        config = {"scenario": builtin_scenario(s, args.n_per_arm).to_dict(), "replicates": args.replicates,
                  "seed": args.seed, "jobs": args.jobs}
        _write_json({**summary.to_dict(), "provenance": _provenance(argv, config)},
                    os.path.join(args.out_dir, f"scenario_{s}.json"))
    header = "\n".join(f"# {line}" for line in _comments(_provenance(
        argv, {"scenarios": scenarios, "replicates": args.replicates, "seed": args.seed})))
    t2, t3 = render_table2(summaries), render_table3(summaries)
    for name, text in (("table2.txt", t2), ("table3.txt", t3)):
        with open(os.path.join(args.out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(header + "\n" + text + "\n")
    print(t2)
    print()
    print(t3)
    for s in summaries:
        if s.flagged:
            print(f"warning: scenario {s.scenario_id}: {s.n_failed_fits} failed fits", file=sys.stderr)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vecurve", description="Time-varying vaccine efficacy, AUC and cases averted.",
        epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"vecurve {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=SCHEMAS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "simulate one trial and write an events CSV")
    p.add_argument("--scenario", type=int, help="built-in scenario 1..8")
    p.add_argument("--scenario-json", help="custom scenario JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--n-per-arm", type=int)
    p.add_argument("--out", default="-")

    p = add("fit", cmd_fit, "fit the partial likelihood and write fit JSON")
    p.add_argument("--events", required=True, help="events CSV ('-' for stdin)")
    p.add_argument("--family", action="append", choices=FAMILIES,
                   help="effect family; repeat to compare families by BIC")
    p.add_argument("--rule", choices=("ag", "first_event"), default="ag")
    p.add_argument("--out", default="-")

    p = add("auc", cmd_auc, "area under the VE curve")
    _add_curve_args(p)
    p.add_argument("--t1", type=float, default=0.0)
    p.add_argument("--t2", type=float)
    p.add_argument("--intervals", help="comma-separated interval lengths, e.g. 3,3,3,3")
    p.add_argument("--method", choices=("auto", "closed", "quadrature"), default="auto")
    p.add_argument("--panels", type=int, default=1024)
    p.add_argument("--fitted-horizon", type=float, help="horizon of the fitted data (labels inter/extrapolation)")
    p.add_argument("--out", default="-")

    p = add("nca", cmd_nca, "number of cases averted per 1000 persons")
    _add_curve_args(p)
    p.add_argument("--variant", choices=("sf", "auc", "auc_season", "auc_age"), default="auc")
    p.add_argument("--incidence", help="incidence CSV (calendar-indexed for seasonal variants)")
    p.add_argument("--events", help="events CSV to tabulate")
    p.add_argument("--intervals", default="3,3,3,3")
    p.add_argument("--horizon", type=float, help="follow-up used for calendar tabulation")
    p.add_argument("--s", type=int, help="target calendar month 1..12")
    p.add_argument("--out", default="-")

    p = add("ve-curve", cmd_ve_curve, "VE(t) on a grid, as CSV")
    _add_curve_args(p)
    p.add_argument("--horizon", type=float, default=12.0)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--out", default="-")

    p = add("nca-by-start", cmd_nca_by_start, "seasonal NCA for each target start month, as CSV")
    _add_curve_args(p)
    p.add_argument("--incidence")
    p.add_argument("--events")
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", default="-")

    p = add("study", cmd_study, "replicate the eight-scenario simulation study")
    p.add_argument("--scenarios", default="1-8")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--n-per-arm", type=int, default=1000)
    p.add_argument("--out-dir", default="study_out")
    return parser


def _fail(exc, status):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_status": status}),
          file=sys.stderr)
    return status


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv)
    except NumericalError as exc:
        return _fail(exc, EXIT_NUMERIC)
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        return _fail(exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
