"""Potential outcome panels and ground-truth dynamic causal estimands.

Three representations share one evaluation interface:

* :class:`TablePanel` stores every ``Y_{i,t}(w_{1:t})`` explicitly, keyed by the
  base-``K`` packed path. Only feasible for short panels.
* :class:`LinearPanelSpec` holds dynamic causal coefficients ``beta[i, t, s]``
  (lag ``s``) and non-stochastic errors ``epsilon[i, t]``.
* :class:`ARPanelSpec` adds autoregressive coefficients ``phi[i, t, k]`` on the
  outcome ``k + 1`` periods back.

Times are 1-based in the scalar API (period ``t`` is array column ``t - 1``);
units are 0-based row indices. Paths passed to the vectorised methods are
integer *codes* into the alphabet, shaped ``(..., n_units, length)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ValidationError

MAX_TABLE_BITS = 24


@dataclass(frozen=True)
class TreatmentAlphabet:
    """Finite ordered set of treatment labels."""

    values: tuple = (0, 1)

    def __post_init__(self):
        vals = tuple(self.values)
        if len(vals) < 2:
            raise ValidationError("treatment alphabet needs at least two labels")
        if len(set(vals)) != len(vals):
            raise ValidationError(f"treatment labels must be distinct: {vals!r}")
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return len(self.values)

    def code(self, label) -> int:
        try:
            return self.values.index(label)
        except ValueError:
            raise ValidationError(f"label {label!r} is not in the alphabet {self.values!r}") from None

    def codes(self, labels) -> np.ndarray:
        return np.array([self.code(v) for v in labels], dtype=np.int64)

    def label(self, code: int):
        return self.values[int(code)]

    def parse(self, token: str) -> int:
        """Code of a label written as text (CSV cells)."""
        token = token.strip()
        for k, v in enumerate(self.values):
            if token == str(v):
                return k
        try:
            x = float(token)
        except ValueError:
            x = None
        if x is not None:
            for k, v in enumerate(self.values):
                if isinstance(v, (int, float)) and not isinstance(v, bool) and float(v) == x:
                    return k
        raise ValidationError(f"unknown treatment label {token!r}; alphabet is {self.values!r}")

    @property
    def is_numeric(self) -> bool:
        return all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in self.values)

    def numeric(self) -> np.ndarray:
        if not self.is_numeric:
            raise ValidationError(f"alphabet {self.values!r} has non-numeric labels")
        return np.asarray(self.values, dtype=np.float64)


BINARY = TreatmentAlphabet((0, 1))


def _as_alphabet(alphabet) -> TreatmentAlphabet:
    if isinstance(alphabet, TreatmentAlphabet):
        return alphabet
    return TreatmentAlphabet(tuple(alphabet))


def _unit_index(units, n_units: int) -> np.ndarray:
    if units is None:
        return np.arange(n_units)
    return np.asarray(units, dtype=np.int64)


class PotentialOutcomePanel:
    """Common interface for the panel representations.

    Subclasses implement :meth:`outcome_step`, which returns the period-``t``
    outcome given the path codes through ``t`` and the outcomes already
    revealed along that same path before ``t``.
    """

    representation = "abstract"
    alphabet: TreatmentAlphabet
    n_units: int
    n_periods: int

    def outcome_step(self, t, paths, y_hist, units=None):
        raise NotImplementedError

    def outcomes_along(self, paths, units=None) -> np.ndarray:
        """Outcomes ``Y_{i,1:L}`` along code paths shaped ``(..., n, L)``."""
        paths = np.asarray(paths, dtype=np.int64)
        length = paths.shape[-1]
        if length > self.n_periods:
            raise ValidationError(f"path length {length} exceeds n_periods={self.n_periods}")
        y = np.empty(paths.shape, dtype=np.float64)
        for t in range(1, length + 1):
            y[..., t - 1] = self.outcome_step(t, paths[..., :t], y[..., : t - 1], units)
        return y

    def evaluate_outcome(self, unit: int, time: int, path: Sequence) -> float:
        """``Y_{unit,time}(path)`` for a label path of length ``time``."""
        path = list(path)
        if len(path) != time:
            raise ValidationError(f"path length {len(path)} does not match time {time}")
        if not 1 <= time <= self.n_periods:
            raise ValidationError(f"time {time} outside 1..{self.n_periods}")
        if not 0 <= unit < self.n_units:
            raise ValidationError(f"unit {unit} outside 0..{self.n_units - 1}")
        codes = self.alphabet.codes(path)[None, :]
        return float(self.outcomes_along(codes, units=[unit])[0, -1])


class TablePanel(PotentialOutcomePanel):
    """General potential outcome panel stored as explicit path tables.

    ``tables[i][t - 1]`` is a length ``K**t`` array; entry ``key`` is the
    outcome along the path whose base-``K`` digits (first period most
    significant) equal ``key``.
    """

    representation = "general-table"

    def __init__(self, tables, alphabet=BINARY):
        self.alphabet = _as_alphabet(alphabet)
        k = self.alphabet.size
        self.n_units = len(tables)
        if self.n_units == 0:
            raise ValidationError("panel needs at least one unit")
        self.n_periods = len(tables[0])
        if self.n_periods * math.log2(k) > MAX_TABLE_BITS:
            raise ValidationError(
                f"explicit tables need T*log2|W| <= {MAX_TABLE_BITS}; "
                f"got T={self.n_periods}, |W|={k}. Use a linear or AR spec."
            )
        self._tables = []
        for t in range(1, self.n_periods + 1):
            col = []
            for i in range(self.n_units):
                if len(tables[i]) != self.n_periods:
                    raise ValidationError("all units need the same number of periods")
                arr = np.asarray(tables[i][t - 1], dtype=np.float64)
                if arr.shape != (k**t,):
                    raise ValidationError(f"table for unit {i}, time {t} must have {k**t} entries")
                col.append(arr)
            self._tables.append(np.stack(col))  # (N, K**t)
        for arr in self._tables:
            arr.setflags(write=False)

    @classmethod
    def from_function(cls, fn, n_units, n_periods, alphabet=BINARY):
        """Tabulate ``fn(unit, time, label_path)`` over every path."""
        alphabet = _as_alphabet(alphabet)
        tables = []
        for i in range(n_units):
            rows = []
            for t in range(1, n_periods + 1):
                rows.append([fn(i, t, tuple(alphabet.label(c) for c in combo))
                             for combo in itertools.product(range(alphabet.size), repeat=t)])
            tables.append(rows)
        return cls(tables, alphabet)

    @classmethod
    def from_panel(cls, panel: PotentialOutcomePanel):
        """Tabulate any (small) panel, e.g. to cross-check another representation."""
        k = panel.alphabet.size
        tables = [[None] * panel.n_periods for _ in range(panel.n_units)]
        for t in range(1, panel.n_periods + 1):
            combos = np.array(list(itertools.product(range(k), repeat=t)), dtype=np.int64)
            for i in range(panel.n_units):
                tables[i][t - 1] = panel.outcomes_along(combos[:, None, :], units=[i])[:, 0, -1]
        return cls(tables, panel.alphabet)

    def pack(self, paths) -> np.ndarray:
        paths = np.asarray(paths, dtype=np.int64)
        key = np.zeros(paths.shape[:-1], dtype=np.int64)
        for j in range(paths.shape[-1]):
            key = key * self.alphabet.size + paths[..., j]
        return key

    def outcome_step(self, t, paths, y_hist, units=None):
        units = _unit_index(units, self.n_units)
        table = self._tables[t - 1][units]  # (n, K**t)
        key = self.pack(paths[..., :t])
        rows = np.broadcast_to(np.arange(len(units)), key.shape)
        return table[rows, key]

    def to_dict(self) -> dict:
        return {
            "kind": self.representation,
            "alphabet": list(self.alphabet.values),
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "tables": [[self._tables[t][i].tolist() for t in range(self.n_periods)]
                       for i in range(self.n_units)],
        }


def _lag_array(values, n_units, n_periods, name, min_lags=1):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != n_units or arr.shape[1] != n_periods:
        raise ValidationError(f"{name} must have shape (n_units, n_periods, n_lags); got {arr.shape}")
    if arr.shape[2] < min_lags:
        raise ValidationError(f"{name} needs at least {min_lags} lag column(s)")
    arr = arr.copy()
    # lags reaching before period 1 do not exist; keep them exactly zero
    for ti in range(min(n_periods, arr.shape[2])):
        arr[:, ti, ti + 1:] = 0.0
    arr.setflags(write=False)
    return arr


def _error_matrix(epsilon, n_units, n_periods):
    eps = np.array(epsilon, dtype=np.float64)
    if eps.shape != (n_units, n_periods):
        raise ValidationError(f"epsilon must have shape ({n_units}, {n_periods}); got {eps.shape}")
    eps.setflags(write=False)
    return eps


class LinearPanelSpec(PotentialOutcomePanel):
    """``Y_{i,t}(w) = sum_s beta[i, t, s] * w_{t-s} + epsilon[i, t]``.

    ``beta`` has shape ``(N, T, L)``; lags ``s >= L`` have coefficient zero.
    Entries with ``s >= t`` are structurally absent and are zeroed.
    """

    representation = "linear"

    def __init__(self, beta, epsilon, alphabet=BINARY):
        self.alphabet = _as_alphabet(alphabet)
        self._values = self.alphabet.numeric()
        eps = np.asarray(epsilon)
        if eps.ndim != 2:
            raise ValidationError("epsilon must be an (n_units, n_periods) matrix")
        self.n_units, self.n_periods = eps.shape
        self.beta = _lag_array(beta, self.n_units, self.n_periods, "beta")
        self.epsilon = _error_matrix(epsilon, self.n_units, self.n_periods)

    @property
    def n_lags(self) -> int:
        return self.beta.shape[2]

    def dense_beta(self) -> np.ndarray:
        """``beta`` padded to ``(N, T, T)``."""
        out = np.zeros((self.n_units, self.n_periods, self.n_periods))
        lags = min(self.n_lags, self.n_periods)
        out[:, :, :lags] = self.beta[:, :, :lags]
        return out

    @property
    def is_homogeneous(self) -> bool:
        return bool(np.all(self.beta == self.beta[:1]))

    @property
    def is_time_invariant(self) -> bool:
        dense = self.dense_beta()
        for s in range(self.n_periods):
            col = dense[:, s:, s]
            if not np.all(col == col[:, :1]):
                return False
        return True

    def outcome_step(self, t, paths, y_hist, units=None):
        units = _unit_index(units, self.n_units)
        x = self._values[paths]
        out = np.broadcast_to(self.epsilon[units, t - 1], paths.shape[:-1]).copy()
        for s in range(min(self.n_lags, t)):
            out += self.beta[units, t - 1, s] * x[..., t - 1 - s]
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.representation,
            "alphabet": list(self.alphabet.values),
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "beta": self.beta.tolist(),
            "epsilon": self.epsilon.tolist(),
        }


class ARPanelSpec(PotentialOutcomePanel):
    """Autoregressive potential outcome panel.

    For ``t > 1``::

        Y_t = sum_k phi[i, t, k-1] * Y_{t-k} + sum_s beta[i, t, s] * w_{t-s} + epsilon[i, t]

    and ``Y_1 = beta[i, 1, 0] * w_1 + epsilon[i, 1]``. ``phi[..., k-1]`` is the
    coefficient on the outcome ``k`` periods back.
    """

    representation = "autoregressive"

    def __init__(self, phi, beta, epsilon, alphabet=BINARY):
        self.alphabet = _as_alphabet(alphabet)
        self._values = self.alphabet.numeric()
        eps = np.asarray(epsilon)
        if eps.ndim != 2:
            raise ValidationError("epsilon must be an (n_units, n_periods) matrix")
        self.n_units, self.n_periods = eps.shape
        self.beta = _lag_array(beta, self.n_units, self.n_periods, "beta")
        phi = np.asarray(phi, dtype=np.float64)
        if phi.ndim != 3 or phi.shape[:2] != (self.n_units, self.n_periods):
            raise ValidationError(f"phi must have shape (n_units, n_periods, n_lags); got {phi.shape}")
        phi = phi.copy()
        for ti in range(min(self.n_periods, phi.shape[2] + 1)):
            phi[:, ti, ti:] = 0.0  # period t has only t-1 outcome lags
        phi.setflags(write=False)
        self.phi = phi
        self.epsilon = _error_matrix(epsilon, self.n_units, self.n_periods)

    @classmethod
    def constant(cls, n_units, n_periods, phi, beta, epsilon, alphabet=BINARY):
        """First-order persistence ``phi`` and contemporaneous effect ``beta`` everywhere."""
        return cls(np.full((n_units, n_periods, 1), float(phi)),
                   np.full((n_units, n_periods, 1), float(beta)), epsilon, alphabet)

    def outcome_step(self, t, paths, y_hist, units=None):
        units = _unit_index(units, self.n_units)
        x = self._values[paths]
        out = np.broadcast_to(self.epsilon[units, t - 1], paths.shape[:-1]).copy()
        for s in range(min(self.beta.shape[2], t)):
            out += self.beta[units, t - 1, s] * x[..., t - 1 - s]
        for k in range(1, min(self.phi.shape[2], t - 1) + 1):
            out += self.phi[units, t - 1, k - 1] * y_hist[..., t - 1 - k]
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.representation,
            "alphabet": list(self.alphabet.values),
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "phi": self.phi.tolist(),
            "beta": self.beta.tolist(),
            "epsilon": self.epsilon.tolist(),
        }


def unroll_ar_to_linear(ar: ARPanelSpec) -> LinearPanelSpec:
    """Rewrite an AR panel as the equivalent linear panel.

    With no persistence the coefficients are returned unchanged. Otherwise
    the result is dense in lags: ``B[t, s] = beta[t, s] + sum_k phi[t, k] B[t-k, s-k]``
    and the errors accumulate the same way.
    """
    if not np.any(ar.phi):
        return LinearPanelSpec(ar.beta, ar.epsilon, ar.alphabet)
    n, T = ar.n_units, ar.n_periods
    src = np.zeros((n, T, T))
    lags = min(ar.beta.shape[2], T)
    src[:, :, :lags] = ar.beta[:, :, :lags]
    big_b = np.zeros((n, T, T))
    big_e = np.zeros((n, T))
    n_phi = ar.phi.shape[2]
    for ti in range(T):
        big_b[:, ti, : ti + 1] = src[:, ti, : ti + 1]
        big_e[:, ti] = ar.epsilon[:, ti]
        for k in range(1, min(n_phi, ti) + 1):
            f = ar.phi[:, ti, k - 1]
            big_b[:, ti, k : ti + 1] += f[:, None] * big_b[:, ti - k, : ti + 1 - k]
            big_e[:, ti] += f * big_e[:, ti - k]
    return LinearPanelSpec(big_b, big_e, ar.alphabet)


def panel_from_dict(doc: Mapping[str, Any]) -> PotentialOutcomePanel:
    kind = doc.get("kind")
    alphabet = TreatmentAlphabet(tuple(doc.get("alphabet", (0, 1))))
    if kind == "linear":
        return LinearPanelSpec(doc["beta"], doc["epsilon"], alphabet)
    if kind == "autoregressive":
        return ARPanelSpec(doc["phi"], doc["beta"], doc["epsilon"], alphabet)
    if kind == "general-table":
        return TablePanel(doc["tables"], alphabet)
    raise ValidationError(f"unknown panel kind {kind!r}")


# ---------------------------------------------------------------------------
# Effect queries and true estimands


@dataclass(frozen=True)
class EffectQuery:
    """A lag-``p`` (or weighted lag-``p,q``) comparison of ``w`` against ``w_tilde``.

    ``q = len(w)``. When ``q == p + 1`` this is a plain lag-``p`` effect; when
    ``q <= p`` the last ``p + 1 - q`` periods are averaged over continuation
    paths with ``weights`` (uniform when omitted).
    """

    w: tuple
    w_tilde: tuple
    p: int = 0
    weights: Mapping[tuple, float] | None = None

    def __post_init__(self):
        w, wt = tuple(self.w), tuple(self.w_tilde)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w_tilde", wt)
        if self.p < 0:
            raise ValidationError("lag p must be non-negative")
        if len(w) != len(wt):
            raise ValidationError("w and w_tilde must have equal length")
        if not 1 <= len(w) <= self.p + 1:
            raise ValidationError(f"path length q={len(w)} must satisfy 0 < q <= p + 1 = {self.p + 1}")
        if self.weights is not None:
            clen = self.p + 1 - len(w)
            total = 0.0
            for key, a in self.weights.items():
                if len(tuple(key)) != clen:
                    raise ValidationError(f"weight key {key!r} must have length {clen}")
                if a < 0:
                    raise ValidationError("weights must be non-negative")
                total += a
            if abs(total - 1.0) > 1e-12:
                raise ValidationError(f"weights must sum to one; got {total!r}")

    @property
    def q(self) -> int:
        return len(self.w)

    @property
    def continuation_length(self) -> int:
        return self.p + 1 - self.q

    @property
    def is_weighted(self) -> bool:
        return self.continuation_length > 0

    def resolve(self, alphabet: TreatmentAlphabet) -> "ResolvedQuery":
        alphabet = _as_alphabet(alphabet)
        k = alphabet.size
        clen = self.continuation_length
        weights = np.zeros(k**clen)
        if self.weights is None:
            weights[:] = 1.0 / k**clen
        else:
            for key, a in self.weights.items():
                idx = 0
                for lab in key:
                    idx = idx * k + alphabet.code(lab)
                weights[idx] += float(a)
        return ResolvedQuery(self, alphabet.codes(self.w), alphabet.codes(self.w_tilde), weights, k)

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "w": list(self.w), "w_tilde": list(self.w_tilde)}


@dataclass(frozen=True)
class ResolvedQuery:
    query: EffectQuery
    w_codes: np.ndarray
    wt_codes: np.ndarray
    weights: np.ndarray  # indexed by packed continuation code
    k: int

    def continuations(self):
        """``(packed_key, code_tuple, weight)`` for every continuation path."""
        clen = self.query.continuation_length
        for key, combo in enumerate(itertools.product(range(self.k), repeat=clen)):
            yield key, combo, self.weights[key]


def _check_cell(panel, unit, time, prefix_len, query):
    if not 0 <= unit < panel.n_units:
        raise ValidationError(f"unit {unit} outside 0..{panel.n_units - 1}")
    if not query.p < time <= panel.n_periods:
        raise ValidationError(f"time {time} must satisfy p < time <= T (p={query.p}, T={panel.n_periods})")
    if prefix_len != time - query.p - 1:
        raise ValidationError(f"prefix length {prefix_len} must equal time - p - 1 = {time - query.p - 1}")


def _effect_from_codes(panel, unit, time, prefix_codes, rq: ResolvedQuery) -> float:
    rows, weights = [], []
    for _, combo, a in rq.continuations():
        if a == 0.0:
            continue
        cont = np.asarray(combo, dtype=np.int64)
        rows.append(np.concatenate([prefix_codes, rq.w_codes, cont]))
        rows.append(np.concatenate([prefix_codes, rq.wt_codes, cont]))
        weights.append(a)
    paths = np.array(rows, dtype=np.int64)[:, None, :]
    y = panel.outcomes_along(paths, units=[unit])[:, 0, -1]
    return float(np.dot(weights, y[0::2] - y[1::2]))


def true_lag_p_effect(panel, unit, time, observed_prefix, query: EffectQuery) -> float:
    """``Y_{i,t}(prefix, w) - Y_{i,t}(prefix, w_tilde)`` for a plain lag-p query."""
    if query.is_weighted:
        raise ValidationError("use true_weighted_effect for queries with q < p + 1")
    prefix = panel.alphabet.codes(observed_prefix)
    _check_cell(panel, unit, time, len(prefix), query)
    return _effect_from_codes(panel, unit, time, prefix, query.resolve(panel.alphabet))


def true_weighted_effect(panel, unit, time, observed_prefix, query: EffectQuery) -> float:
    """Weighted average over continuations ``v`` of ``Y(prefix, w, v) - Y(prefix, w_tilde, v)``."""
    prefix = panel.alphabet.codes(observed_prefix)
    _check_cell(panel, unit, time, len(prefix), query)
    return _effect_from_codes(panel, unit, time, prefix, query.resolve(panel.alphabet))


def true_cell_effects(panel, assignments, query: EffectQuery) -> np.ndarray:
    """True effect for every cell, shape ``(N, T - p)``, given realized assignment codes.

    Column ``j`` is period ``t = p + 1 + j``; only assignments before ``t - p``
    are read from ``assignments``.
    """
    W = np.asarray(assignments, dtype=np.int64)
    if W.shape != (panel.n_units, panel.n_periods):
        raise ValidationError(f"assignments must have shape ({panel.n_units}, {panel.n_periods})")
    p, T = query.p, panel.n_periods
    if p >= T:
        raise ValidationError(f"lag p={p} must be smaller than T={T}")
    if isinstance(panel, (LinearPanelSpec, ARPanelSpec)):
        return linear_lag_effects(panel, query)
    rq = query.resolve(panel.alphabet)
    out = np.zeros((panel.n_units, T - p))
    for _, combo, a in rq.continuations():
        if a == 0.0:
            continue
        cont = np.asarray(combo, dtype=np.int64)
        for t in range(p + 1, T + 1):
            prefix = W[:, : t - p - 1]
            tail_w = np.broadcast_to(np.concatenate([rq.w_codes, cont]), (panel.n_units, p + 1))
            tail_wt = np.broadcast_to(np.concatenate([rq.wt_codes, cont]), (panel.n_units, p + 1))
            paths = np.stack([np.concatenate([prefix, tail_w], axis=1),
                              np.concatenate([prefix, tail_wt], axis=1)])
            y = panel.outcomes_along(paths)[..., -1]
            out[:, t - p - 1] += a * (y[0] - y[1])
    return out


def linear_lag_effects(spec, query: EffectQuery) -> np.ndarray:
    """Closed-form cell effects for linear (or AR) panels; free of the prefix.

    ``sum_v a_v sum_{s=0}^{p} beta[i, t, s] * (x_{p+1-s} - x~_{p+1-s})`` with
    ``x = (w, v)``.
    """
    if isinstance(spec, ARPanelSpec):
        spec = unroll_ar_to_linear(spec)
    rq = query.resolve(spec.alphabet)
    vals = spec.alphabet.numeric()
    p, T = query.p, spec.n_periods
    beta = spec.dense_beta()
    # the continuation cancels in the difference, so only the switched block matters
    diff = np.zeros(p + 1)
    diff[: query.q] = vals[rq.w_codes] - vals[rq.wt_codes]
    total_weight = float(rq.weights.sum())
    out = np.zeros((spec.n_units, T - p))
    for j in range(p + 1):
        s = p - j  # path element j sits s periods before t
        out += diff[j] * beta[:, p:, s]
    return out * total_weight


def average_effects(cell_effects: np.ndarray) -> dict:
    """Time-t, unit-i and total averages of a ``(N, T - p)`` cell field."""
    tau = np.asarray(cell_effects, dtype=np.float64)
    return {"time": tau.mean(axis=0), "unit": tau.mean(axis=1), "total": float(tau.mean())}


def true_average_effects(panel, assignments, query: EffectQuery) -> dict:
    """True averages of the lag-p effects; keys ``time`` (over t = p+1..T), ``unit``, ``total``."""
    return average_effects(true_cell_effects(panel, assignments, query))
