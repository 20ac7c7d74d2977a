"""Command-line interface: ``panel-dce <subcommand> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path


from .assignment import BernoulliMechanism, draw_panel, mechanism_from_dict
from .errors import NumericalError, ValidationError
from .ht_estimators import estimate, estimate_series, normalize_level
from .inference import SmallSampleWarning, conservative_test, fisher_randomization_test, randomization_distribution
from .linear_fe import (moments_for, problimit_twoway_fe, problimit_unit_fe, twoway_fe_estimate,
                        unit_fe_estimate)
from .panel_core import average_effects, linear_lag_effects, panel_from_dict
from .panel_io import ingest_panel, read_json, write_json, write_panel, write_rows
from .pipeline import TARGETS, analyze_panel, build_query, run_reproduce, write_analysis
from .sim_harness import PairedBinaryDesign, SimDesign, generate_design_panel, paired_binary_panel

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _labels(text, alphabet):
    if text is None:
        return None
    return tuple(alphabet.label(alphabet.parse(tok)) for tok in text.split(",") if tok.strip())


def _query_args(p):
    p.add_argument("--panel", required=True, help="long-format panel CSV")
    p.add_argument("--lag", type=int, action="append", dest="lags", help="lag p (repeatable)")
    p.add_argument("--q", type=int, default=None, help="length of the switched block (default len(w) or 1)")
    p.add_argument("--w", default=None, help="comma-separated treatment path, e.g. 1 or 1,0")
    p.add_argument("--w-tilde", default=None, help="comparison path, same length as --w")
    p.add_argument("--out-dir", default="reports")


def _level_args(p, default="total"):
    p.add_argument("--level", choices=("unit", "time", "total"), default=default)
    p.add_argument("--index", type=int, default=None,
                   help="period (1-based) for --level time, unit row (0-based) for --level unit; "
                        "omit to report every period or unit")


def _queries(args, observed):
    if not args.lags:
        raise ValidationError("at least one --lag is required")
    w = _labels(args.w, observed.alphabet)
    wt = _labels(args.w_tilde, observed.alphabet)
    q = args.q if args.q is not None else (len(w) if w else 1)
    return [build_query(p, q, w, wt, observed.alphabet) for p in args.lags]


def _load_mechanism(path):
    return mechanism_from_dict(read_json(path))


def _estimates(observed, query, level, index):
    if level == "total" or index is not None:
        return [estimate(observed, query, level, index)]
    return estimate_series(observed, query, level)


def cmd_simulate(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.design == "ar":
        design = SimDesign(phi=(args.phi,), beta=(args.beta,), p_treat=(args.p_treat,), error_dist=args.errors,
                           N=args.n_units, T=args.n_periods, R=1, seed=args.seed)
        panel = generate_design_panel(design, args.phi, args.beta, args.seed)
        groups = None
    else:
        design = PairedBinaryDesign(args.n_units, args.n_periods, args.p_treat, args.base, args.beta)
        panel, groups = paired_binary_panel(design, args.seed)
    mech = _load_mechanism(args.mechanism) if args.mechanism else BernoulliMechanism(args.p_treat)
    observed = draw_panel(mech, panel, args.seed, stream=0, group_ids=groups)
    write_panel(observed, out / "panel.csv")
    write_json(mech.to_dict(), out / "mechanism.json")
    write_json(panel.to_dict(), out / "outcome_spec.json")
    truth = []
    for p in range(min(4, panel.n_periods)):
        avg = average_effects(linear_lag_effects(panel, build_query(p)))
        truth.append({"provenance": "panel_core/true_total_effect", "lag": p, "q": 1, "total": avg["total"]})
    write_json({"design": args.design, "seed": args.seed, "true_effects": truth, "summary": observed.summary()},
               out / "truth.json")
    print(f"wrote {out / 'panel.csv'} (N={observed.n_units}, T={observed.n_periods})")


def cmd_estimate(args):
    observed = ingest_panel(args.panel)
    level = normalize_level(args.level)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallSampleWarning)
        for query in _queries(args, observed):
            for est in _estimates(observed, query, level, args.index):
                rows.append({"provenance": f"ht_estimator/{level}/lag{query.p}", **est.to_dict(), "se": est.se})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["provenance", "level", "index", "p", "q", "w", "w_tilde", "point", "var_bound", "n_cells", "se"]
    for row in rows:
        row["w"], row["w_tilde"] = " ".join(map(str, row["w"])), " ".join(map(str, row["w_tilde"]))
    write_rows(rows, out / "estimates.csv", cols)
    write_json({"summary": observed.summary(), "estimates": rows}, out / "estimates.json")
    for row in rows:
        print(f"lag {row['p']} {row['level']}{'' if row.get('index') is None else ' ' + str(row['index'])}: "
              f"{row['point']:.6g} (se {row['se']:.4g})")


def cmd_test_weak(args):
    observed = ingest_panel(args.panel)
    level = normalize_level(args.level)
    rows = []
    with warnings.catch_warnings():
        if args.level != "total":
            warnings.simplefilter("ignore", SmallSampleWarning)
        for query in _queries(args, observed):
            for est in _estimates(observed, query, level, args.index):
                res = conservative_test(est, args.null, args.alpha, args.alternative)
                doc = res.to_dict()
                doc["w"], doc["w_tilde"] = " ".join(map(str, doc["w"])), " ".join(map(str, doc["w_tilde"]))
                rows.append({"provenance": f"conservative_test/{level}/lag{query.p}", **doc})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "weak_tests.csv")
    write_json({"tests": rows}, out / "weak_tests.json")
    for row in rows:
        print(f"lag {row['p']}: z={row['z_stat']:.4g} p={row['p_value']:.4g}")


def cmd_test_sharp(args):
    observed = ingest_panel(args.panel)
    mech = _load_mechanism(args.mechanism)
    level = normalize_level(args.level)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for query in _queries(args, observed):
        res = fisher_randomization_test(observed, mech, query, level, args.reps, args.seed, args.index,
                                        args.alternative)
        dist = randomization_distribution(res)
        tag = f"lag{query.p}"
        write_rows([{"draw": b + 1, "statistic": v} for b, v in enumerate(res.null_draws)],
                   out / f"null_draws_{tag}.csv", ["draw", "statistic"])
        write_rows([{"bin_left": lo, "bin_right": hi, "count": int(c)}
                    for lo, hi, c in zip(dist.bin_edges[:-1], dist.bin_edges[1:], dist.counts)],
                   out / f"null_histogram_{tag}.csv", ["bin_left", "bin_right", "count"])
        results.append({"provenance": f"fisher_randomization_test/{level}/{tag}", "lag": query.p,
                        **res.to_dict(), "quantiles": dist.quantiles, "null_mean": dist.mean, "null_sd": dist.sd})
        print(f"lag {query.p}: statistic={res.observed_stat:.6g} p={res.p_value:.4g} (B={res.B})")
    write_json({"tests": results}, out / "sharp_tests.json")


def cmd_fe_bias(args):
    if not args.panel and not args.spec:
        raise ValidationError("give --panel (estimates) and/or --spec with --mechanism (probability limits)")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {}
    if args.panel:
        observed = ingest_panel(args.panel)
        doc["estimates"] = {"unit_fe": unit_fe_estimate(observed), "twoway_fe": twoway_fe_estimate(observed)}
    if args.spec:
        if not args.mechanism:
            raise ValidationError("--spec needs --mechanism for the assignment moments")
        spec = panel_from_dict(read_json(args.spec))
        mech = _load_mechanism(args.mechanism)
        values = tuple(float(v) for v in spec.alphabet.numeric())
        moments = moments_for(mech, spec.n_periods, values, spec.n_units)
        doc["problimit_unit_fe"] = problimit_unit_fe(spec, moments)
        doc["problimit_twoway_fe"] = problimit_twoway_fe(spec, moments)
    write_json(doc, out / "fe_bias.json")
    rows = [{"provenance": f"linear_fe/{k}", "term": term, "value": v}
            for k, d in doc.items() for term, v in d.items()]
    write_rows(rows, out / "fe_bias.csv", ["provenance", "term", "value"])
    for row in rows:
        print(f"{row['provenance']} {row['term']}: {row['value']:.6g}")


def cmd_reproduce(args):
    paths = run_reproduce(args.target, args.out_dir, args.errors, args.scale, args.reps, args.seed, args.level)
    for p in paths:
        print(f"wrote {p}")


def cmd_analyze(args):
    observed = ingest_panel(args.panel)
    mech = _load_mechanism(args.mechanism) if args.mechanism else None
    if not args.lags:
        raise ValidationError("at least one --lag is required")
    w = _labels(args.w, observed.alphabet)
    wt = _labels(args.w_tilde, observed.alphabet)
    q = args.q if args.q is not None else (len(w) if w else 1)
    result = analyze_panel(observed, mech, args.lags, q, w, wt, args.reps, args.seed, args.alpha)
    for path in write_analysis(result, args.out_dir):
        print(f"wrote {path}")
    for r in result.lags:
        rp = "n/a" if r.randomization_p is None else f"{r.randomization_p:.4f}"
        print(f"lag {r.query.p}: estimate={r.total.point:.4f} conservative_p={r.conservative_p:.4f} "
              f"randomization_p={rp}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panel-dce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic panel experiment")
    p.add_argument("--design", choices=("ar", "paired-binary"), default="ar")
    p.add_argument("--phi", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.0, help="contemporaneous effect")
    p.add_argument("--errors", choices=("normal", "cauchy"), default="normal")
    p.add_argument("--base", type=float, default=0.62, help="control outcome rate (paired-binary)")
    p.add_argument("--n-units", type=int, default=100)
    p.add_argument("--n-periods", type=int, default=10)
    p.add_argument("--p-treat", type=float, default=0.5)
    p.add_argument("--mechanism", default=None, help="mechanism JSON (overrides --p-treat)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="reports")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="point estimates and variance bounds")
    _query_args(p)
    _level_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test-weak", help="conservative test of a weak null")
    _query_args(p)
    _level_args(p)
    p.add_argument("--null", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.set_defaults(func=cmd_test_weak)

    p = sub.add_parser("test-sharp", help="randomization test of the sharp null")
    _query_args(p)
    _level_args(p)
    p.add_argument("--mechanism", required=True, help="mechanism JSON")
    p.add_argument("--reps", type=int, default=999, help="number of null redraws B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.set_defaults(func=cmd_test_sharp)

    p = sub.add_parser("fe-bias", help="fixed-effects estimates and probability limits")
    p.add_argument("--panel", default=None)
    p.add_argument("--spec", default=None, help="linear or AR outcome spec JSON")
    p.add_argument("--mechanism", default=None)
    p.add_argument("--out-dir", default="reports")
    p.set_defaults(func=cmd_fe_bias)

    p = sub.add_parser("reproduce", help="rerun a simulation table or figure's data")
    p.add_argument("--target", choices=TARGETS, required=True)
    p.add_argument("--errors", choices=("normal", "cauchy"), default="normal")
    p.add_argument("--scale", choices=("desk", "full"), default="desk")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--level", choices=("unit", "time", "total"), default=None)
    p.add_argument("--out-dir", default="reports")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("analyze", help="full pipeline: estimates, weak and sharp tests per lag")
    _query_args(p)
    p.add_argument("--mechanism", default=None, help="mechanism JSON (needed for randomization p-values)")
    p.add_argument("--reps", type=int, default=999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"panel-dce: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, FileNotFoundError) as exc:
        print(f"panel-dce: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
