"""End-to-end analysis of a logged panel experiment and reproduction targets."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from scipy import stats

from .assignment import AssignmentMechanism, ObservedPanel
from .errors import ValidationError
from .ht_estimators import EffectEstimate, estimate, estimate_series
from .inference import (SmallSampleWarning, conservative_test, null_statistics, randomization_p_value)
from .panel_core import EffectQuery
from .panel_io import write_json, write_rows
from .sim_harness import POWER_BETAS, SimDesign, power_curve, qq_export, size_table


def build_query(p: int, q: int = 1, w=None, w_tilde=None, alphabet=None) -> EffectQuery:
    """Query for lag ``p``; ``w`` and ``w_tilde`` default to all-ones and all-zeros of length ``q``."""
    if w is None and w_tilde is None:
        hi, lo = (1, 0) if alphabet is None else (alphabet.values[-1], alphabet.values[0])
        w, w_tilde = (hi,) * q, (lo,) * q
    elif w is None or w_tilde is None:
        raise ValidationError("give both w and w_tilde, or neither")
    elif len(w) != q:
        raise ValidationError(f"--q={q} does not match the length of w ({len(w)})")
    if q > p + 1:
        raise ValidationError(f"q={q} exceeds p + 1 = {p + 1} for lag {p}")
    return EffectQuery(tuple(w), tuple(w_tilde), p)


@dataclass
class LagResult:
    query: EffectQuery
    total: EffectEstimate
    conservative_p: float
    ci: tuple
    randomization_p: float | None
    B: int
    series: dict = field(default_factory=dict)


@dataclass
class AnalysisResult:
    lags: list
    summary: dict
    seed: int
    alpha: float


def _series_rows(estimates, level, observed, alpha):
    crit = stats.norm.ppf(1 - alpha / 2)
    rows = []
    for est in estimates:
        label = observed.unit_label(est.index) if level == "unit" else est.index
        rows.append({
            "provenance": f"ht_estimator/{level}/lag{est.query.p}",
            "level": level, "lag": est.query.p, "index": label, "point": est.point, "se": est.se,
            "ci_lower": est.point - crit * est.se, "ci_upper": est.point + crit * est.se,
            "n_cells": est.n_cells,
        })
    return rows


def analyze_panel(observed: ObservedPanel, mech: AssignmentMechanism | None, lags: Sequence[int], q: int = 1,
                  w=None, w_tilde=None, B: int = 999, seed: int = 0, alpha: float = 0.05,
                  with_series: bool = True) -> AnalysisResult:
    """Total-level estimate, conservative p-value and randomization p-value per lag.

    All lags share one set of sharp-null redraws. Without a mechanism the
    randomization column is left empty.
    """
    lags = [int(p) for p in lags]
    if not lags:
        raise ValidationError("at least one lag is required")
    if any(p < 0 or p >= observed.n_periods for p in lags):
        raise ValidationError(f"lags must lie in 0..{observed.n_periods - 1}")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    queries = [build_query(p, q, w, w_tilde, observed.alphabet) for p in lags]
    totals = [estimate(observed, qu, "total") for qu in queries]
    rand_p = [None] * len(lags)
    if mech is not None:
        if B < 1:
            raise ValidationError("B must be at least 1")
        draws = null_statistics(observed, mech, queries, "total", B, seed)
        rand_p = [randomization_p_value(est.point, d) for est, d in zip(totals, draws)]
    results = []
    for qu, est, rp in zip(queries, totals, rand_p):
        test = conservative_test(est, 0.0, alpha)
        res = LagResult(qu, est, test.p_value, (test.ci_lower, test.ci_upper), rp, B if mech else 0)
        if with_series:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SmallSampleWarning)
                for level in ("unit", "time"):
                    res.series[level] = _series_rows(estimate_series(observed, qu, level), level, observed, alpha)
        results.append(res)
    return AnalysisResult(results, observed.summary(), int(seed), float(alpha))


def write_analysis(result: AnalysisResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in result.lags:
        rows.append({
            "provenance": f"ht_estimator/total/lag{r.query.p}", "lag": r.query.p, "q": r.query.q,
            "w": " ".join(map(str, r.query.w)), "w_tilde": " ".join(map(str, r.query.w_tilde)),
            "point": r.total.point, "se": r.total.se, "var_bound": r.total.var_bound, "n_cells": r.total.n_cells,
            "conservative_p": r.conservative_p, "ci_lower": r.ci[0], "ci_upper": r.ci[1],
            "randomization_p": r.randomization_p, "B": r.B,
        })
    # three-row layout: estimate, conservative p-value, randomization p-value
    wide = []
    for name, key in (("point_estimate", "point"), ("conservative_p", "conservative_p"),
                      ("randomization_p", "randomization_p")):
        rec = {"provenance": f"analyze/{key}", "statistic": name}
        rec.update({f"lag{row['lag']}": row[key] for row in rows})
        wide.append(rec)
    series = [row for r in result.lags for level in ("unit", "time") for row in r.series.get(level, [])]
    paths = [out / "analysis_by_lag.csv", out / "analysis_table.csv", out / "analysis_series.csv",
             out / "analysis.json"]
    write_rows(rows, paths[0])
    write_rows(wide, paths[1])
    write_rows(series, paths[2], ["provenance", "level", "lag", "index", "point", "se", "ci_lower", "ci_upper",
                                  "n_cells"])
    write_json({"seed": result.seed, "alpha": result.alpha, "summary": result.summary, "lags": rows}, paths[3])
    return paths


# ---------------------------------------------------------------------------
# Reproduction targets

TARGETS = ("tableA1", "tableA2", "tableA3", "power", "qq")


def target_design(target: str, errors: str = "normal", scale: str = "desk", reps: int | None = None,
                  seed: int = 20240101) -> tuple[SimDesign, str]:
    """Design and estimand level for a reproduction target.

    ``scale='desk'`` shrinks the Cauchy runs of the time and unit tables from
    50,000 to 5,000 units (periods) and 2,000 replications.
    """
    if target not in TARGETS:
        raise ValidationError(f"unknown target {target!r}; choose from {TARGETS}")
    if scale not in ("desk", "full"):
        raise ValidationError("scale must be 'desk' or 'full'")
    cauchy = errors == "cauchy"
    big = 50_000 if scale == "full" else 5_000
    default_r = 2000 if (cauchy and scale == "desk") or target == "power" else 5000
    R = reps or default_r
    if target in ("tableA1", "power"):
        dims, level = ((big if cauchy else 1000), 5), "time"
    elif target == "tableA2":
        dims, level = (1, (big if cauchy else 1000)), "unit"
    else:
        dims, level = ((500, 100) if cauchy else (100, 10)), "total"
    betas = POWER_BETAS if target == "power" else (0.0,)
    return SimDesign(beta=betas, error_dist=errors, N=dims[0], T=dims[1], R=R, seed=seed), level


def run_reproduce(target: str, out_dir, errors: str = "normal", scale: str = "desk", reps: int | None = None,
                  seed: int = 20240101, level: str | None = None) -> list[Path]:
    design, default_level = target_design(target, errors, scale, reps, seed)
    level = level or default_level
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if target.startswith("table"):
        report = size_table(design, level, 0, reference=target)
    elif target == "power":
        report = power_curve(design, level, (0, 1))
    else:
        report = qq_export(design, level, 0)
    rows = [dict(row, provenance=f"sim_harness/{report.kind}/{row['level']}/lag{row['lag']}") for row in report.rows]
    cols = ["provenance"] + [k for k in rows[0] if k != "provenance"]
    stem = f"{target}_{errors}"
    paths = [out / f"{stem}.csv", out / f"{stem}.json"]
    write_rows(rows, paths[0], cols)
    write_json({**report.to_dict(), "rows": rows}, paths[1])
    if target == "qq":
        qq_rows = []
        for (phi, pt), qq in sorted(report.samples.items()):
            for z, nq in zip(qq.standardized, qq.normal_quantiles):
                qq_rows.append({"phi": phi, "p_treat": pt, "normal_quantile": nq, "standardized_estimate": z})
        paths.append(out / f"{stem}_pairs.csv")
        write_rows(qq_rows, paths[-1], ["phi", "p_treat", "normal_quantile", "standardized_estimate"])
    return paths
