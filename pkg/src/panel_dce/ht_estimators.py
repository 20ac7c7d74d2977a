"""Horvitz-Thompson estimators of lag-p effects and their variance-bound estimators.

For cell ``(i, t)`` with observed window ``w^obs_{i,t-p:t}`` and adapted propensity
``p_obs`` (the product of realized step probabilities over the window)::

    tau_hat    = a_v * y_it * {1(head = w) - 1(head = w_tilde)} / p_obs
    gamma2_hat = a_v**2 * y_it**2 * {1(head = w) + 1(head = w_tilde)} / p_obs**2

``head`` is the first ``q`` labels of the window and ``v`` the remaining
continuation; for plain lag-p queries ``q = p + 1`` and ``a_v = 1``.
Averages over cells use the non-contributing zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .assignment import AssignmentMechanism, ObservedPanel, adapted_propensity
from .errors import ValidationError
from .panel_core import EffectQuery, ResolvedQuery, _as_alphabet

LEVELS = {"time": "time", "time_t": "time", "unit": "unit", "unit_i": "unit", "total": "total"}


def normalize_level(level: str) -> str:
    try:
        return LEVELS[level]
    except KeyError:
        raise ValidationError(f"level must be one of {sorted(set(LEVELS.values()))}; got {level!r}") from None


@dataclass(frozen=True)
class CellEstimate:
    unit: int
    time: int
    tau_hat: float
    gamma2_hat: float
    contributing: bool


@dataclass(frozen=True)
class EffectEstimate:
    """Average of cell estimators over a time, a unit, or the whole panel.

    ``var_bound`` is the mean of the cell ``gamma2_hat``; the variance of
    ``point`` is bounded (in expectation) by ``var_bound / n_cells``.
    """

    level: str
    point: float
    var_bound: float
    n_cells: int
    query: EffectQuery
    index: int | None = None

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_bound / self.n_cells))

    def to_dict(self) -> dict:
        doc = {
            "level": self.level,
            "p": self.query.p,
            "q": self.query.q,
            "w": list(self.query.w),
            "w_tilde": list(self.query.w_tilde),
            "point": self.point,
            "var_bound": self.var_bound,
            "n_cells": self.n_cells,
        }
        if self.index is not None:
            doc["index"] = self.index
        return doc


def _resolve(query, alphabet) -> ResolvedQuery:
    return query if isinstance(query, ResolvedQuery) else query.resolve(_as_alphabet(alphabet))


def ht_arrays(codes, outcomes, step_probs, query, alphabet=(0, 1)):
    """Cell estimators for every ``t = p+1..T`` at once.

    Inputs have shape ``(..., N, T)``; outputs ``tau_hat``, ``gamma2_hat`` and
    the contributing mask have shape ``(..., N, T - p)`` with column ``j`` for
    period ``p + 1 + j``.
    """
    rq = _resolve(query, alphabet)
    p, q = rq.query.p, rq.query.q
    codes = np.asarray(codes)
    T = codes.shape[-1]
    if p >= T:
        raise ValidationError(f"lag p={p} must be smaller than T={T}")
    win = sliding_window_view(codes, p + 1, axis=-1)  # (..., N, T-p, p+1)
    head = win[..., :q]
    hit_w = np.all(head == rq.w_codes, axis=-1)
    hit_wt = np.all(head == rq.wt_codes, axis=-1)
    if p + 1 > q:
        key = np.zeros(win.shape[:-1], dtype=np.int64)
        for j in range(q, p + 1):
            key = key * rq.k + win[..., j]
        a = rq.weights[key]
    else:
        a = 1.0
    prop = sliding_window_view(np.asarray(step_probs, dtype=np.float64), p + 1, axis=-1).prod(axis=-1)
    y = np.asarray(outcomes, dtype=np.float64)[..., p:]
    scaled = a * y / prop
    tau = scaled * (hit_w.astype(np.float64) - hit_wt)
    gamma2 = scaled**2 * (hit_w.astype(np.float64) + hit_wt)
    contributing = (hit_w | hit_wt) & (np.asarray(a) != 0)
    return tau, gamma2, contributing


def _window_propensity(observed: ObservedPanel, mech, unit, time, p) -> float:
    if mech is None:
        return float(np.prod(observed.step_probs[unit, time - p - 1 : time]))
    start = time - p - 1
    ap = adapted_propensity(
        mech, unit,
        observed.assignments[unit, :start], observed.outcomes[unit, :start],
        observed.assignments[unit, start:time], observed.outcomes[unit, start:time],
    )
    return ap.value


def ht_weighted_cell(observed: ObservedPanel, mech: AssignmentMechanism | None, unit: int, time: int,
                     query: EffectQuery) -> CellEstimate:
    """Cell estimator for any query (plain or weighted).

    With ``mech`` given, the window propensity is recomputed from the
    mechanism; otherwise the logged step probabilities are multiplied.
    """
    p = query.p
    if not 0 <= unit < observed.n_units:
        raise ValidationError(f"unit {unit} outside 0..{observed.n_units - 1}")
    if not p < time <= observed.n_periods:
        raise ValidationError(f"time {time} must satisfy p < time <= T (p={p}, T={observed.n_periods})")
    rq = query.resolve(observed.alphabet)
    window = observed.assignments[unit, time - p - 1 : time]
    head, cont = window[: query.q], window[query.q :]
    key = 0
    for c in cont:
        key = key * rq.k + int(c)
    a = float(rq.weights[key]) if len(cont) else 1.0
    hit_w = bool(np.array_equal(head, rq.w_codes))
    hit_wt = bool(np.array_equal(head, rq.wt_codes))
    if not (hit_w or hit_wt) or a == 0.0:
        return CellEstimate(unit, time, 0.0, 0.0, False)
    prop = _window_propensity(observed, mech, unit, time, p)
    if not 0.0 < prop < 1.0:
        raise ValidationError(f"adapted propensity {prop!r} at unit {unit}, time {time} is not in (0, 1)")
    scaled = a * float(observed.outcomes[unit, time - 1]) / prop
    return CellEstimate(unit, time, scaled * (int(hit_w) - int(hit_wt)), scaled**2 * (int(hit_w) + int(hit_wt)), True)


def ht_cell(observed: ObservedPanel, mech: AssignmentMechanism | None, unit: int, time: int,
            query: EffectQuery) -> CellEstimate:
    """Cell estimator for a plain lag-p query (``q = p + 1``)."""
    if query.is_weighted:
        raise ValidationError("use ht_weighted_cell for queries with q < p + 1")
    return ht_weighted_cell(observed, mech, unit, time, query)


def average_estimates(cells, level: str, query: EffectQuery, index: int | None = None) -> EffectEstimate:
    """Arithmetic means of ``tau_hat`` and ``gamma2_hat`` over the given cells."""
    cells = list(cells)
    if not cells:
        raise ValidationError("cannot average an empty set of cells")
    tau = np.array([c.tau_hat for c in cells])
    g2 = np.array([c.gamma2_hat for c in cells])
    return EffectEstimate(normalize_level(level), float(tau.mean()), float(g2.mean()), len(cells), query, index)


def reduce_level(tau, gamma2, level: str, index: int | None, p: int):
    """Collapse ``(..., N, T - p)`` cell arrays to a level; returns ``(point, var_bound, n_cells)``.

    ``index`` is a 1-based time for the ``time`` level and a 0-based unit for
    the ``unit`` level.
    """
    level = normalize_level(level)
    n, width = tau.shape[-2], tau.shape[-1]
    if level == "total":
        return tau.mean(axis=(-2, -1)), gamma2.mean(axis=(-2, -1)), n * width
    if index is None:
        raise ValidationError(f"level {level!r} needs an index")
    if level == "time":
        j = index - p - 1
        if not 0 <= j < width:
            raise ValidationError(f"time {index} must satisfy p < t <= T")
        return tau[..., j].mean(axis=-1), gamma2[..., j].mean(axis=-1), n
    if not 0 <= index < n:
        raise ValidationError(f"unit {index} outside 0..{n - 1}")
    return tau[..., index, :].mean(axis=-1), gamma2[..., index, :].mean(axis=-1), width


def estimate(observed: ObservedPanel, query: EffectQuery, level: str = "total",
             index: int | None = None) -> EffectEstimate:
    """Point estimate and variance bound from the logged data alone."""
    tau, g2, _ = ht_arrays(observed.assignments, observed.outcomes, observed.step_probs, query,
                           observed.alphabet)
    point, vb, n = reduce_level(tau, g2, level, index, query.p)
    return EffectEstimate(normalize_level(level), float(point), float(vb), int(n), query, index)


def estimate_series(observed: ObservedPanel, query: EffectQuery, level: str) -> list[EffectEstimate]:
    """Estimates for every period (``time``) or every unit (``unit``)."""
    level = normalize_level(level)
    if level == "total":
        return [estimate(observed, query, "total")]
    if level == "time":
        idx = range(query.p + 1, observed.n_periods + 1)
    else:
        idx = range(observed.n_units)
    tau, g2, _ = ht_arrays(observed.assignments, observed.outcomes, observed.step_probs, query,
                           observed.alphabet)
    out = []
    for k in idx:
        point, vb, n = reduce_level(tau, g2, level, k, query.p)
        out.append(EffectEstimate(level, float(point), float(vb), int(n), query, k))
    return out


def true_gamma2(panel, mech: AssignmentMechanism, unit: int, time: int, prefix_codes, query: EffectQuery) -> float:
    """Variance bound target ``sum_v a_v**2 [Y(w v)**2 / p(w v) + Y(w~ v)**2 / p(w~ v)]``.

    Propensities condition on ``prefix_codes`` and the outcomes it reveals.
    """
    rq = query.resolve(panel.alphabet)
    prefix = np.asarray(prefix_codes, dtype=np.int64)
    if len(prefix) != time - query.p - 1:
        raise ValidationError("prefix length must equal time - p - 1")
    total = 0.0
    for _, combo, a in rq.continuations():
        if a == 0.0:
            continue
        for head in (rq.w_codes, rq.wt_codes):
            path = np.concatenate([prefix, head, np.asarray(combo, dtype=np.int64)])
            y = panel.outcomes_along(path[None, None, :], units=[unit])[0, 0]
            ap = adapted_propensity(mech, unit, prefix, y[: len(prefix)], path[len(prefix):], y[len(prefix):])
            total += a**2 * y[-1] ** 2 / ap.value
    return float(total)
