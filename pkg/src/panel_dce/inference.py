"""Conservative weak-null tests and Fisher randomization tests for sharp nulls."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .assignment import (AssignmentMechanism, ObservedPanel, SharpNullPanel, draw_batch,
                         enumerate_unit_paths, MAX_ENUMERATION)
from .errors import ValidationError
from .ht_estimators import EffectEstimate, ht_arrays, normalize_level, reduce_level
from .panel_core import EffectQuery

ALTERNATIVES = ("two-sided", "greater", "less")
# relative slack when comparing a redraw statistic with the observed one
TIE_RTOL = 1e-12
BATCH_ELEMENTS = 2_000_000


class SmallSampleWarning(UserWarning):
    """The normal approximation is being used with fewer than 30 cells."""


def _check_alternative(alternative):
    if alternative not in ALTERNATIVES:
        raise ValidationError(f"alternative must be one of {ALTERNATIVES}; got {alternative!r}")


@dataclass(frozen=True)
class ConservativeTestResult:
    estimate: EffectEstimate
    null_value: float
    z_stat: float
    p_value: float
    ci_lower: float
    ci_upper: float
    alpha: float
    alternative: str = "two-sided"

    @property
    def reject(self) -> bool:
        return self.p_value < self.alpha

    def to_dict(self) -> dict:
        return {
            **self.estimate.to_dict(),
            "null_value": self.null_value,
            "se": self.estimate.se,
            "z_stat": self.z_stat,
            "p_value": self.p_value,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "alpha": self.alpha,
            "alternative": self.alternative,
        }


def normal_p_value(z, alternative: str = "two-sided"):
    z = np.asarray(z, dtype=np.float64)
    if alternative == "two-sided":
        return 2.0 * stats.norm.sf(np.abs(z))
    if alternative == "greater":
        return stats.norm.sf(z)
    return stats.norm.cdf(z)


def conservative_test(estimate: EffectEstimate, null_value: float = 0.0, alpha: float = 0.05,
                      alternative: str = "two-sided") -> ConservativeTestResult:
    """Normal test of a weak null using the variance-bound standard error.

    ``z = (point - null) / sqrt(var_bound / n_cells)``. When the bound is zero,
    ``z`` is 0 and the p-value is 1.
    """
    _check_alternative(alternative)
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    if estimate.var_bound < 0:
        raise ValidationError("var_bound is negative")
    if estimate.n_cells < 2:
        raise ValidationError("the conservative test needs at least two cells")
    if estimate.n_cells < 30:
        warnings.warn(f"only {estimate.n_cells} cells; the normal approximation may be poor",
                      SmallSampleWarning, stacklevel=2)
    se = estimate.se
    if se == 0.0:
        z, p = 0.0, 1.0
    else:
        z = (estimate.point - null_value) / se
        p = float(normal_p_value(z, alternative))
    if alternative == "two-sided":
        crit = stats.norm.ppf(1 - alpha / 2)
        lo, hi = estimate.point - crit * se, estimate.point + crit * se
    elif alternative == "greater":
        lo, hi = estimate.point - stats.norm.ppf(1 - alpha) * se, np.inf
    else:
        lo, hi = -np.inf, estimate.point + stats.norm.ppf(1 - alpha) * se
    return ConservativeTestResult(estimate, float(null_value), float(z), float(p), float(lo), float(hi),
                                  float(alpha), alternative)


def conservative_reject(points, var_bounds, n_cells: int, null_value: float = 0.0, alpha: float = 0.05,
                        alternative: str = "two-sided") -> np.ndarray:
    """Vectorised rejection decisions matching :func:`conservative_test`."""
    se = np.sqrt(np.asarray(var_bounds, dtype=np.float64) / n_cells)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (np.asarray(points) - null_value) / se, 0.0)
    return normal_p_value(z, alternative) < alpha


# ---------------------------------------------------------------------------
# Randomization tests


def randomization_p_value(observed_stat: float, null_draws, alternative: str = "two-sided") -> float:
    """Add-one Monte Carlo p-value ``(1 + #{extreme}) / (B + 1)``."""
    _check_alternative(alternative)
    draws = np.asarray(null_draws, dtype=np.float64)
    return float((1 + _n_extreme(observed_stat, draws, alternative)) / (len(draws) + 1))


def _extreme_mask(observed_stat, draws, alternative):
    slack = TIE_RTOL * max(1.0, abs(observed_stat))
    if alternative == "two-sided":
        return np.abs(draws) >= abs(observed_stat) - slack
    if alternative == "greater":
        return draws >= observed_stat - slack
    return draws <= observed_stat + slack


def _n_extreme(observed_stat, draws, alternative):
    return int(_extreme_mask(observed_stat, draws, alternative).sum())


@dataclass(frozen=True)
class RandomizationTestResult:
    observed_stat: float
    null_draws: np.ndarray = field(repr=False)
    p_value: float
    seed: int
    B: int
    statistic: str = "total"
    alternative: str = "two-sided"

    def to_dict(self) -> dict:
        return {"observed_stat": self.observed_stat, "p_value": self.p_value, "seed": self.seed,
                "B": self.B, "statistic": self.statistic, "alternative": self.alternative}


def _statistic(codes, y, sp, query, alphabet, level, index):
    tau, g2, _ = ht_arrays(codes, y, sp, query, alphabet)
    point, _, _ = reduce_level(tau, g2, level, index, query.p)
    return point


def null_statistics(observed: ObservedPanel, mech: AssignmentMechanism, queries, level: str, B: int,
                    seed: int, index: int | None = None, group_ids=None) -> np.ndarray:
    """Statistics of every query on ``B`` shared sharp-null redraws; shape ``(len(queries), B)``.

    Replicate ``b`` uses stream ``b + 1`` of ``seed`` (stream 0 is reserved for
    drawing a primary panel), so results do not depend on batching.
    """
    if B < 1:
        raise ValidationError("B must be at least 1")
    level = normalize_level(level)
    null_panel = SharpNullPanel(observed)
    mech.check_compatible(null_panel)
    if group_ids is None:
        group_ids = observed.group_ids
    cells = observed.n_units * observed.n_periods
    chunk = max(1, BATCH_ELEMENTS // cells)
    out = np.empty((len(queries), B))
    for start in range(0, B, chunk):
        streams = np.arange(start + 1, min(B, start + chunk) + 1)
        codes, y, sp = draw_batch(mech, null_panel, seed, streams, group_ids)
        for k, query in enumerate(queries):
            out[k, start : start + len(streams)] = _statistic(codes, y, sp, query, observed.alphabet, level, index)
    return out


def fisher_randomization_test(observed: ObservedPanel, mech: AssignmentMechanism, query: EffectQuery,
                              statistic: str = "total", B: int = 999, seed: int = 0,
                              index: int | None = None, alternative: str = "two-sided",
                              group_ids=None) -> RandomizationTestResult:
    """Sampled randomization test of the sharp null of no lag-p effect.

    Under the sharp null every path reveals the observed outcome, so redraws
    from ``mech`` (fed those outcomes) give the statistic's null distribution.
    """
    _check_alternative(alternative)
    if observed.n_periods <= query.p:
        raise ValidationError(f"lag p={query.p} needs more than {observed.n_periods} periods")
    level = normalize_level(statistic)
    obs = float(_statistic(observed.assignments, observed.outcomes, observed.step_probs, query,
                           observed.alphabet, level, index))
    draws = null_statistics(observed, mech, [query], level, B, seed, index, group_ids)[0]
    return RandomizationTestResult(obs, draws, randomization_p_value(obs, draws, alternative), int(seed), int(B),
                                   level, alternative)


@dataclass(frozen=True)
class ExactRandomizationResult:
    observed_stat: float
    values: np.ndarray = field(repr=False)
    probs: np.ndarray = field(repr=False)
    p_value: float


def exact_randomization_test(observed: ObservedPanel, mech: AssignmentMechanism, query: EffectQuery,
                             statistic: str = "total", index: int | None = None,
                             alternative: str = "two-sided") -> ExactRandomizationResult:
    """Randomization p-value from the complete null distribution (small panels only).

    Every assignment panel is enumerated with its probability under ``mech``
    (outcomes imputed by the sharp null); the p-value is the exact tail
    probability of the statistic, with no add-one term.
    """
    _check_alternative(alternative)
    level = normalize_level(statistic)
    null_panel = SharpNullPanel(observed)
    k, N, T = observed.alphabet.size, observed.n_units, observed.n_periods
    if k ** (N * T) > MAX_ENUMERATION:
        raise ValidationError(f"exact enumeration of {k}**{N * T} panels is too large")
    tables = [enumerate_unit_paths(mech, null_panel, i) for i in range(N)]
    combos = np.array(list(itertools.product(*(range(len(tb.probs)) for tb in tables))), dtype=np.int64)
    codes = np.stack([tb.paths[combos[:, i]] for i, tb in enumerate(tables)], axis=1)
    y = np.stack([tb.outcomes[combos[:, i]] for i, tb in enumerate(tables)], axis=1)
    sp = np.stack([tb.step_probs[combos[:, i]] for i, tb in enumerate(tables)], axis=1)
    probs = np.prod([tb.probs[combos[:, i]] for i, tb in enumerate(tables)], axis=0)
    keep = probs > 0
    values = _statistic(codes[keep], y[keep], sp[keep], query, observed.alphabet, level, index)
    probs = probs[keep]
    obs = float(_statistic(observed.assignments, observed.outcomes, observed.step_probs, query,
                           observed.alphabet, level, index))
    p = float(probs[_extreme_mask(obs, values, alternative)].sum())
    return ExactRandomizationResult(obs, values, probs, min(1.0, p))


@dataclass(frozen=True)
class RandomizationDistribution:
    bin_edges: np.ndarray
    counts: np.ndarray
    quantiles: dict
    mean: float
    sd: float
    median_se: float


def randomization_distribution(result: RandomizationTestResult, bins: int | None = None,
                               probs=(0.01, 0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975, 0.99)) -> RandomizationDistribution:
    """Histogram and quantiles of the null draws (linear-interpolation quantiles).

    ``median_se`` is the normal-theory standard error of the sample median,
    ``sd * sqrt(pi / (2 B))``, for symmetry checks.
    """
    draws = np.asarray(result.null_draws, dtype=np.float64)
    if bins is None:
        bins = min(50, len(draws))
    counts, edges = np.histogram(draws, bins=bins)
    qs = {float(q): float(v) for q, v in zip(probs, np.quantile(draws, probs))}
    sd = float(draws.std(ddof=1)) if len(draws) > 1 else 0.0
    return RandomizationDistribution(edges, counts, qs, float(draws.mean()), sd,
                                     sd * float(np.sqrt(np.pi / (2 * len(draws)))))
