"""Monte Carlo harness: AR designs, size tables, power curves and QQ data.

Each ``(phi, p_treat)`` cell draws its error matrix once and keeps it fixed, so
the potential outcomes are a finite population; only the Bernoulli
assignments are redrawn across the ``R`` replications. Seeds derive from
``(seed, phi index, p index, tag)`` and do not involve ``beta``, so every
``beta`` in a power curve sees the same errors and the same assignments.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .assignment import BernoulliMechanism, draw_batch
from .errors import ValidationError
from .ht_estimators import ht_arrays, normalize_level, reduce_level
from .inference import conservative_reject
from .panel_core import ARPanelSpec, EffectQuery, LinearPanelSpec, linear_lag_effects
from .rng import derive_seed

BATCH_ELEMENTS = 2_000_000
ERROR_DISTS = ("normal", "cauchy")
DESIGN_PHI = (0.25, 0.5, 0.75)
DESIGN_P = (0.25, 0.5, 0.75)
POWER_BETAS = tuple(round(-1 + 0.1 * k, 10) for k in range(21))

# published null rejection rates at alpha = 0.05, rows phi, columns p_treat
_A1_NORMAL = ((0.044, 0.049, 0.050), (0.048, 0.050, 0.049), (0.050, 0.051, 0.057))
_A1_CAUCHY = ((0.031, 0.031, 0.034), (0.048, 0.039, 0.043), (0.052, 0.047, 0.057))
_A2_NORMAL = ((0.044, 0.046, 0.052), (0.050, 0.054, 0.050), (0.046, 0.049, 0.054))
_A3_NORMAL = ((0.050, 0.047, 0.048), (0.052, 0.052, 0.050), (0.050, 0.049, 0.048))
_A3_CAUCHY = ((0.028, 0.029, 0.032), (0.046, 0.039, 0.044), (0.055, 0.044, 0.054))


def _grid(rows):
    return {(phi, p): rows[i][j] for i, phi in enumerate(DESIGN_PHI) for j, p in enumerate(DESIGN_P)}


REFERENCE_SIZE = {
    ("tableA1", "normal"): _grid(_A1_NORMAL),
    ("tableA1", "cauchy"): _grid(_A1_CAUCHY),
    ("tableA2", "normal"): _grid(_A2_NORMAL),
    ("tableA2", "cauchy"): _grid(_A1_CAUCHY),
    ("tableA3", "normal"): _grid(_A3_NORMAL),
    ("tableA3", "cauchy"): _grid(_A3_CAUCHY),
}


@dataclass(frozen=True)
class SimDesign:
    """Grid of AR designs.

    ``phi`` is the first-order persistence, ``beta`` the contemporaneous
    effect, ``p_treat`` the Bernoulli treatment probability.
    """

    phi: tuple = DESIGN_PHI
    beta: tuple = (0.0,)
    p_treat: tuple = DESIGN_P
    error_dist: str = "normal"
    N: int = 1000
    T: int = 5
    R: int = 5000
    seed: int = 20240101

    def __post_init__(self):
        for name in ("phi", "beta", "p_treat"):
            vals = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if not vals:
                raise ValidationError(f"{name} grid is empty")
            object.__setattr__(self, name, vals)
        if any(not 0.0 < p < 1.0 for p in self.p_treat):
            raise ValidationError("p_treat values must lie in (0, 1)")
        if self.error_dist not in ERROR_DISTS:
            raise ValidationError(f"error_dist must be one of {ERROR_DISTS}")
        if self.R < 1 or self.N < 1 or self.T < 1:
            raise ValidationError("N, T and R must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass
class SimReport:
    """Rows of per-cell results plus optional per-replicate samples."""

    kind: str
    design: dict
    rows: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "design": self.design, "rows": self.rows}


def _threads() -> int:
    raw = os.environ.get("PANEL_DCE_THREADS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"PANEL_DCE_THREADS must be an integer; got {raw!r}") from None
    return max(1, n)


def lag_query(p: int) -> EffectQuery:
    """Switch treatment 1 vs 0 at ``p`` periods back, uniform over later labels."""
    return EffectQuery((1,), (0,), p)


def error_matrix(design: SimDesign, rep_seed: int) -> np.ndarray:
    rng = np.random.default_rng(rep_seed)
    shape = (design.N, design.T)
    if design.error_dist == "normal":
        return rng.standard_normal(shape)
    return rng.standard_cauchy(shape)


def generate_design_panel(design: SimDesign, phi: float, beta: float, rep_seed: int) -> ARPanelSpec:
    """AR panel with persistence ``phi``, effect ``beta`` and errors drawn once from ``rep_seed``."""
    return ARPanelSpec.constant(design.N, design.T, phi, beta, error_matrix(design, rep_seed))


def outcome_hash(panel: ARPanelSpec) -> str:
    h = hashlib.sha256()
    for arr in (panel.phi, panel.beta, panel.epsilon):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def cell_seeds(design: SimDesign, i_phi: int, i_p: int) -> tuple[int, int]:
    """``(error seed, assignment seed)`` for one grid cell."""
    return derive_seed(design.seed, i_phi, i_p, 0), derive_seed(design.seed, i_phi, i_p, 1)


def _default_index(level, design, p):
    if level == "time":
        return design.T
    if level == "unit":
        return 0
    return None


def _true_level_effect(panel, query, level, index) -> float:
    eff = linear_lag_effects(panel, query)
    return float(reduce_level(eff, eff, level, index, query.p)[0])


def _check_lags(design, lags):
    if max(lags) >= design.T:
        raise ValidationError(f"lag {max(lags)} needs T > lag (T={design.T})")


def run_cell(design: SimDesign, i_phi: int, i_p: int, level: str, lags, index=None, alpha: float = 0.05,
             keep_samples: bool = False) -> list[dict]:
    """Replicate one ``(phi, p_treat)`` cell for every ``beta`` and lag.

    Returns one row per ``(beta, lag)``. With ``keep_samples`` each row also
    carries the replicate estimates and bounds (``_points``, ``_var_bounds``).
    """
    level = normalize_level(level)
    phi, p_treat = design.phi[i_phi], design.p_treat[i_p]
    err_seed, draw_seed = cell_seeds(design, i_phi, i_p)
    eps = error_matrix(design, err_seed)
    panels = [ARPanelSpec.constant(design.N, design.T, phi, b, eps) for b in design.beta]
    hashes = [outcome_hash(pn) for pn in panels]
    mech = BernoulliMechanism(p_treat)
    queries = [lag_query(p) for p in lags]
    resolved = [q.resolve(panels[0].alphabet) for q in queries]
    idx = [index if index is not None else _default_index(level, design, p) for p in lags]
    truths = [[_true_level_effect(pn, q, level, ix) for q, ix in zip(queries, idx)] for pn in panels]
    points = np.empty((len(panels), len(lags), design.R))
    bounds = np.empty_like(points)
    n_cells = [0] * len(lags)
    chunk = max(1, BATCH_ELEMENTS // (design.N * design.T))
    for start in range(0, design.R, chunk):
        streams = np.arange(start, min(design.R, start + chunk))
        codes, y0, sp = draw_batch(mech, panels[0], draw_seed, streams, validate=False)
        for b, pn in enumerate(panels):
            y = y0 if b == 0 else pn.outcomes_along(codes)
            for k, (rq, ix) in enumerate(zip(resolved, idx)):
                tau, g2, _ = ht_arrays(codes, y, sp, rq)
                pt, vb, n = reduce_level(tau, g2, level, ix, rq.query.p)
                points[b, k, start : start + len(streams)] = pt
                bounds[b, k, start : start + len(streams)] = vb
                n_cells[k] = n
    # the potential outcomes must not have moved during the replications
    for pn, h in zip(panels, hashes):
        if outcome_hash(pn) != h:
            raise RuntimeError("potential outcome table changed across replications")
    rows = []
    for b, beta in enumerate(design.beta):
        for k, p in enumerate(lags):
            rej = conservative_reject(points[b, k], bounds[b, k], n_cells[k], 0.0, alpha)
            rate = float(rej.mean())
            row = {
                "phi": phi, "p_treat": p_treat, "beta": beta, "error_dist": design.error_dist,
                "level": level, "lag": p, "index": idx[k], "N": design.N, "T": design.T, "R": design.R,
                "n_cells": n_cells[k], "true_effect": truths[b][k], "rejections": int(rej.sum()),
                "rate": rate, "mc_se": float(np.sqrt(rate * (1 - rate) / design.R)),
                "outcome_hash": hashes[b],
            }
            if keep_samples:
                row["_points"] = points[b, k].copy()
                row["_var_bounds"] = bounds[b, k].copy()
            rows.append(row)
    return rows


def _run_grid(design, level, lags, index, alpha, keep_samples):
    lags = tuple(int(p) for p in np.atleast_1d(lags))
    _check_lags(design, lags)
    cells = [(i, j) for i in range(len(design.phi)) for j in range(len(design.p_treat))]
    with ThreadPoolExecutor(max_workers=min(_threads(), len(cells))) as pool:
        parts = list(pool.map(lambda c: run_cell(design, c[0], c[1], level, lags, index, alpha, keep_samples),
                              cells))
    return [row for part in parts for row in part]


def _design_doc(design, **extra):
    doc = asdict(design)
    doc.update(extra)
    return doc


def size_table(design: SimDesign, level: str = "time", lag: int = 0, index: int | None = None,
               alpha: float = 0.05, reference: str | None = None) -> SimReport:
    """Null rejection rates over the ``(phi, p_treat)`` grid; needs ``beta == (0,)``."""
    if design.beta != (0.0,):
        raise ValidationError("size tables need the null design beta = 0")
    rows = _run_grid(design, level, lag, index, alpha, False)
    ref = REFERENCE_SIZE.get((reference, design.error_dist)) if reference else None
    for row in rows:
        row["reference"] = ref.get((row["phi"], row["p_treat"])) if ref else None
    return SimReport("size", _design_doc(design, level=normalize_level(level), lag=lag, alpha=alpha,
                                         reference=reference), rows)


def power_curve(design: SimDesign, level: str = "time", lags=(0, 1), index: int | None = None,
                alpha: float = 0.05) -> SimReport:
    """Rejection rates of ``H0: effect = 0`` across the ``beta`` grid, for each lag."""
    rows = _run_grid(design, level, lags, index, alpha, False)
    return SimReport("power", _design_doc(design, level=normalize_level(level), lags=list(np.atleast_1d(lags)),
                                          alpha=alpha), rows)


@dataclass(frozen=True)
class QQData:
    phi: float
    p_treat: float
    standardized: np.ndarray
    normal_quantiles: np.ndarray
    correlation: float
    n_dropped: int
    degenerate: bool
    reason: str = ""


def qq_pairs(points, var_bounds, n_cells: int, truth: float, phi: float = float("nan"),
             p_treat: float = float("nan")) -> QQData:
    """Sorted ``(estimate - truth) / sqrt(var_bound / n)`` against normal plotting positions.

    Replicates with a zero bound (no standardization possible) are dropped and
    counted. Constant samples are flagged as degenerate.
    """
    points = np.asarray(points, dtype=np.float64)
    vb = np.asarray(var_bounds, dtype=np.float64)
    ok = vb > 0
    z = np.sort((points[ok] - truth) / np.sqrt(vb[ok] / n_cells))
    dropped = int((~ok).sum())
    if len(z) < 3 or np.ptp(z) == 0:
        return QQData(phi, p_treat, z, np.empty(0), float("nan"), dropped, True,
                      "estimates are constant; a QQ comparison is undefined")
    q = stats.norm.ppf((np.arange(1, len(z) + 1) - 0.5) / len(z))
    return QQData(phi, p_treat, z, q, float(np.corrcoef(z, q)[0, 1]), dropped, False)


def qq_export(design: SimDesign, level: str = "total", lag: int = 0, index: int | None = None) -> SimReport:
    """Standardized replicate estimates and normal quantiles for each grid cell."""
    if design.beta != (0.0,):
        raise ValidationError("QQ export uses the null design beta = 0")
    rows = _run_grid(design, level, lag, index, 0.05, True)
    report = SimReport("qq", _design_doc(design, level=normalize_level(level), lag=lag))
    for row in rows:
        qq = qq_pairs(row.pop("_points"), row.pop("_var_bounds"), row["n_cells"], row["true_effect"],
                      row["phi"], row["p_treat"])
        row.update({"qq_correlation": qq.correlation, "n_dropped": qq.n_dropped, "degenerate": qq.degenerate,
                    "note": qq.reason})
        report.rows.append(row)
        report.samples[(row["phi"], row["p_treat"])] = qq
    return report


# ---------------------------------------------------------------------------
# Paired binary-outcome experiments


@dataclass(frozen=True)
class PairedBinaryDesign:
    """Units re-paired every period; each pair shares one Bernoulli draw.

    Outcomes are ``Y_it(w) = 1{U_it < base + effect * w_t}`` with ``U_it``
    uniform and fixed, so effects are contemporaneous only.
    """

    n_units: int = 110
    n_periods: int = 20
    p_treat: float = 5 / 11
    base: float = 0.62
    effect: float = 0.285

    def __post_init__(self):
        if self.n_units % 2:
            raise ValidationError("paired designs need an even number of units")
        if not 0.0 <= self.base <= 1.0 or not 0.0 <= self.base + self.effect <= 1.0:
            raise ValidationError("base and base + effect must be probabilities")
        if not 0.0 < self.p_treat < 1.0:
            raise ValidationError("p_treat must lie in (0, 1)")


def paired_binary_panel(design: PairedBinaryDesign, seed: int):
    """``(LinearPanelSpec, group_ids)`` for one synthetic paired experiment."""
    rng = np.random.default_rng(seed)
    u = rng.random((design.n_units, design.n_periods))
    y0 = (u < design.base).astype(np.float64)
    y1 = (u < design.base + design.effect).astype(np.float64)
    groups = np.empty((design.n_units, design.n_periods), dtype=object)
    for t in range(design.n_periods):
        order = rng.permutation(design.n_units)
        pair = np.empty(design.n_units, dtype=np.int64)
        pair[order] = np.arange(design.n_units) // 2
        groups[:, t] = [f"r{t + 1}p{k}" for k in pair]
    return LinearPanelSpec((y1 - y0)[:, :, None], y0), groups
