"""Sequentially randomized assignment mechanisms and panel draws.

Every mechanism is individualistic: the distribution of ``W_{i,t}`` depends only
on unit ``i``'s own past assignments and observed outcomes. Mechanisms work on
integer label codes and expose one vectorised rule::

    step_probs(t, w_hist, y_hist, units) -> array (..., n, K)

where ``w_hist`` and ``y_hist`` have shape ``(..., n, t - 1)``.

Draws use :func:`panel_dce.rng.counter_uniforms`, keyed by
``(seed, stream, unit, time)``, so a unit's draw never depends on other units.
Sampling inverts the cumulative step distribution at that uniform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import AssumptionViolation, ValidationError
from .panel_core import BINARY, PotentialOutcomePanel, TreatmentAlphabet, _as_alphabet
from .rng import GROUP_DOMAIN, UNIT_DOMAIN, counter_uniforms

PROB_TOL = 1e-12
MAX_ENUMERATION = 2**20


def _check_distribution(probs: np.ndarray, what: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValidationError(f"{what}: probabilities must lie in [0, 1]")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > PROB_TOL):
        raise ValidationError(f"{what}: each distribution must sum to one within {PROB_TOL}")
    return probs


class AssignmentMechanism:
    """Base class. Subclasses define :meth:`step_probs` and the bookkeeping below."""

    kind = "abstract"
    individualistic = True
    #: True when step probabilities ignore all history (enables batch drawing)
    history_free = False
    n_labels = 2

    def step_probs(self, t: int, w_hist, y_hist, units) -> np.ndarray:
        raise NotImplementedError

    @property
    def bounds(self) -> tuple[float, float]:
        """Smallest and largest per-step label probability the mechanism can emit."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def check_compatible(self, panel) -> None:
        k = panel.alphabet.size
        if k != self.n_labels:
            raise ValidationError(f"mechanism has {self.n_labels} labels but the panel alphabet has {k}")


class CategoricalMechanism(AssignmentMechanism):
    """Independent draws with fixed per-(unit, time) label probabilities.

    ``probabilities`` has shape ``(K,)``, ``(T, K)`` or ``(N, T, K)``.
    """

    kind = "bernoulli"
    history_free = True

    def __init__(self, probabilities):
        probs = _check_distribution(probabilities, "categorical mechanism")
        if probs.ndim not in (1, 2, 3):
            raise ValidationError("probabilities must have shape (K,), (T, K) or (N, T, K)")
        self.probabilities = probs
        self.probabilities.setflags(write=False)
        self.n_labels = probs.shape[-1]
        if self.n_labels < 2:
            raise ValidationError("need at least two labels")

    def marginal_probs(self, n_units: int, n_periods: int) -> np.ndarray:
        """Label probabilities for every cell, shape ``(N, T, K)``."""
        p = self.probabilities
        if p.ndim == 1:
            return np.broadcast_to(p, (n_units, n_periods, self.n_labels))
        if p.ndim == 2:
            if p.shape[0] < n_periods:
                raise ValidationError(f"mechanism covers {p.shape[0]} periods, panel has {n_periods}")
            return np.broadcast_to(p[:n_periods], (n_units, n_periods, self.n_labels))
        if p.shape[0] != n_units or p.shape[1] < n_periods:
            raise ValidationError(f"mechanism shape {p.shape[:2]} does not cover ({n_units}, {n_periods})")
        return p[:, :n_periods]

    def step_probs(self, t, w_hist, y_hist, units):
        units = np.asarray(units)
        p = self.probabilities
        if p.ndim == 1:
            row = np.broadcast_to(p, (len(units), self.n_labels))
        elif p.ndim == 2:
            row = np.broadcast_to(p[t - 1], (len(units), self.n_labels))
        else:
            row = p[units, t - 1]
        return np.broadcast_to(row, np.shape(w_hist)[:-1] + (self.n_labels,))

    @property
    def bounds(self):
        return float(self.probabilities.min()), float(self.probabilities.max())

    def check_compatible(self, panel):
        super().check_compatible(panel)
        self.marginal_probs(panel.n_units, panel.n_periods)

    def to_dict(self):
        return {"kind": "categorical", "probabilities": self.probabilities.tolist()}


class BernoulliMechanism(CategoricalMechanism):
    """Binary independent draws with treatment probability ``p`` (scalar, ``(T,)`` or ``(N, T)``)."""

    def __init__(self, p):
        p = np.asarray(p, dtype=np.float64)
        if np.any(p < 0) or np.any(p > 1):
            raise ValidationError("treatment probability must lie in [0, 1]")
        self.p = p
        super().__init__(np.stack([1.0 - p, p], axis=-1))

    def to_dict(self):
        return {"kind": "bernoulli", "p": self.p.tolist()}


class MarkovMechanism(AssignmentMechanism):
    """Assignment follows a Markov chain on the unit's own previous label.

    ``transition[j, k] = Pr(W_t = k | W_{t-1} = j)``; period 1 uses ``initial``.
    """

    kind = "markov"

    def __init__(self, transition, initial):
        trans = _check_distribution(transition, "Markov transition matrix")
        init = _check_distribution(initial, "Markov initial distribution")
        if trans.ndim != 2 or trans.shape[0] != trans.shape[1]:
            raise ValidationError("transition matrix must be square")
        if init.shape != (trans.shape[0],):
            raise ValidationError("initial distribution length must match the transition matrix")
        self.transition = trans
        self.initial = init
        self.transition.setflags(write=False)
        self.initial.setflags(write=False)
        self.n_labels = trans.shape[0]

    @classmethod
    def symmetric(cls, rho: float, initial=(0.5, 0.5)):
        """Binary chain that keeps its previous label with probability ``rho``."""
        return cls([[rho, 1.0 - rho], [1.0 - rho, rho]], initial)

    def step_probs(self, t, w_hist, y_hist, units):
        shape = np.shape(w_hist)[:-1] + (self.n_labels,)
        if t == 1:
            return np.broadcast_to(self.initial, shape)
        return self.transition[np.asarray(w_hist)[..., -1]]

    @property
    def bounds(self):
        vals = np.concatenate([self.transition.ravel(), self.initial])
        return float(vals.min()), float(vals.max())

    def to_dict(self):
        return {"kind": "markov", "transition": self.transition.tolist(), "initial": self.initial.tolist()}


class ThresholdMechanism(AssignmentMechanism):
    """Binary rule reacting to the unit's last observed outcome.

    Treatment probability is ``base``, shifted to ``base + offset`` when the
    previous outcome exceeds ``cutoff``. Period 1 uses ``base``.
    """

    kind = "history-dependent"

    def __init__(self, base: float, offset: float, cutoff: float = 0.0):
        self.base = float(base)
        self.offset = float(offset)
        self.cutoff = float(cutoff)
        for q in (self.base, self.base + self.offset):
            if not 0.0 <= q <= 1.0:
                raise ValidationError(f"threshold mechanism probability {q} outside [0, 1]")

    def step_probs(self, t, w_hist, y_hist, units):
        shape = np.shape(w_hist)[:-1]
        if t == 1:
            q = np.full(shape, self.base)
        else:
            q = np.where(np.asarray(y_hist)[..., -1] > self.cutoff, self.base + self.offset, self.base)
        return np.stack([1.0 - q, q], axis=-1)

    @property
    def bounds(self):
        qs = [self.base, self.base + self.offset]
        vals = qs + [1.0 - q for q in qs]
        return min(vals), max(vals)

    def to_dict(self):
        return {"kind": "threshold", "base": self.base, "offset": self.offset, "cutoff": self.cutoff}


def mechanism_from_dict(doc: Mapping[str, Any]) -> AssignmentMechanism:
    kind = doc.get("kind")
    if kind == "bernoulli":
        return BernoulliMechanism(doc["p"])
    if kind == "categorical":
        return CategoricalMechanism(doc["probabilities"])
    if kind == "markov":
        return MarkovMechanism(doc["transition"], doc["initial"])
    if kind in ("threshold", "history-dependent"):
        return ThresholdMechanism(doc["base"], doc["offset"], doc.get("cutoff", 0.0))
    raise ValidationError(f"unknown mechanism kind {kind!r}")


# ---------------------------------------------------------------------------
# Observed data


@dataclass(frozen=True, eq=False)
class ObservedPanel:
    """Realized assignments (as codes), outcomes and realized step probabilities.

    ``step_probs[i, t-1]`` is ``Pr(W_{i,t} = w^obs_{i,t} | own history)``.
    ``group_ids``, when given, is an ``(N, T)`` array of labels; units sharing a
    label at time ``t`` received one common draw.
    """

    assignments: np.ndarray
    outcomes: np.ndarray
    step_probs: np.ndarray
    alphabet: TreatmentAlphabet = BINARY
    group_ids: np.ndarray | None = field(default=None, compare=False)
    unit_ids: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alphabet", _as_alphabet(self.alphabet))
        w = np.array(self.assignments, dtype=np.int64)
        y = np.array(self.outcomes, dtype=np.float64)
        sp = np.array(self.step_probs, dtype=np.float64)
        if w.ndim != 2:
            raise ValidationError("assignments must be an N x T matrix")
        if y.shape != w.shape or sp.shape != w.shape:
            raise ValidationError("assignments, outcomes and step_probs must share one N x T shape")
        if np.any(w < 0) or np.any(w >= self.alphabet.size):
            raise ValidationError("assignment codes fall outside the alphabet")
        bad = np.argwhere(~((sp > 0) & (sp < 1)))
        if len(bad):
            i, t = bad[0]
            raise AssumptionViolation(
                f"step probability {sp[i, t]!r} at unit {i}, time {t + 1} is not in (0, 1)",
                unit=int(i), time=int(t) + 1)
        if not np.all(np.isfinite(y)):
            raise ValidationError("outcomes must be finite")
        g = None
        if self.group_ids is not None:
            g = np.asarray(self.group_ids)
            if g.shape != w.shape:
                raise ValidationError("group_ids must have the assignment shape")
            for t in range(w.shape[1]):
                _, inv = np.unique(g[:, t], return_inverse=True)
                first = np.full(inv.max() + 1, -1)
                first[inv[::-1]] = w[::-1, t]
                if np.any(first[inv] != w[:, t]):
                    raise ValidationError(f"units sharing a group at time {t + 1} have different assignments")
            g = g.copy()
            g.setflags(write=False)
        if self.unit_ids is not None:
            ids = tuple(self.unit_ids)
            if len(ids) != w.shape[0] or len(set(ids)) != len(ids):
                raise ValidationError("unit_ids must be distinct and one per unit")
            object.__setattr__(self, "unit_ids", ids)
        for arr in (w, y, sp):
            arr.setflags(write=False)
        object.__setattr__(self, "assignments", w)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "step_probs", sp)
        object.__setattr__(self, "group_ids", g)

    def __eq__(self, other):
        if not isinstance(other, ObservedPanel):
            return NotImplemented
        return (self.alphabet == other.alphabet and np.array_equal(self.assignments, other.assignments)
                and np.array_equal(self.outcomes, other.outcomes)
                and np.array_equal(self.step_probs, other.step_probs))

    __hash__ = None

    @property
    def n_units(self) -> int:
        return self.assignments.shape[0]

    @property
    def n_periods(self) -> int:
        return self.assignments.shape[1]

    def unit_label(self, i: int):
        return self.unit_ids[i] if self.unit_ids is not None else i

    def labels(self) -> np.ndarray:
        return np.asarray(self.alphabet.values, dtype=object)[self.assignments]

    def numeric_assignments(self) -> np.ndarray:
        return self.alphabet.numeric()[self.assignments]

    def summary(self) -> dict:
        """Counts and means of treatments and outcomes."""
        counts = np.bincount(self.assignments.ravel(), minlength=self.alphabet.size)
        out = {
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "n_cells": int(self.assignments.size),
            "treatment_counts": {str(v): int(c) for v, c in zip(self.alphabet.values, counts)},
            "treatment_shares": {str(v): float(c) / self.assignments.size
                                 for v, c in zip(self.alphabet.values, counts)},
            "outcome_mean": float(self.outcomes.mean()),
            "outcome_sd": float(self.outcomes.std(ddof=1)) if self.outcomes.size > 1 else 0.0,
            "outcome_min": float(self.outcomes.min()),
            "outcome_max": float(self.outcomes.max()),
        }
        if self.alphabet.is_numeric:
            out["treatment_mean"] = float(self.numeric_assignments().mean())
        return out


# ---------------------------------------------------------------------------
# Drawing


def _group_index(group_ids, n_units, n_periods) -> np.ndarray | None:
    if group_ids is None:
        return None
    g = np.asarray(group_ids)
    if g.shape == (n_units,):
        g = np.repeat(g[:, None], n_periods, axis=1)
    if g.shape != (n_units, n_periods):
        raise ValidationError(f"group_ids must have shape ({n_units},) or ({n_units}, {n_periods})")
    _, inv = np.unique(g.ravel(), return_inverse=True)
    return inv.reshape(g.shape).astype(np.int64)


def _uniforms(seed, streams, n_units, t, gidx):
    streams = np.asarray(streams, dtype=np.int64)[:, None]
    if gidx is None:
        return counter_uniforms(seed, streams, np.arange(n_units)[None, :], t, UNIT_DOMAIN)
    return counter_uniforms(seed, streams, gidx[None, :, t - 1], t, GROUP_DOMAIN)


def _sample(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    return (u[..., None] >= cum[..., :-1]).sum(axis=-1)


def _check_groups(codes, gidx, t):
    if gidx is None:
        return
    g = gidx[:, t - 1]
    first = np.full(codes.shape[:-1] + (g.max() + 1,), -1, dtype=np.int64)
    first[..., g[::-1]] = codes[..., ::-1]
    if np.any(np.take(first, g, axis=-1) != codes):
        raise ValidationError(f"group members at time {t} have different step distributions; "
                              "a shared draw gave them different labels")


def draw_batch(mech: AssignmentMechanism, panel: PotentialOutcomePanel, seed: int, streams,
               group_ids=None, validate: bool = True):
    """Draw several independent assignment panels at once.

    Parameters
    ----------
    streams : sequence of int
        One replicate per stream id; replicate ``r`` uses keys ``(seed, streams[r], ...)``.
    group_ids : array, optional
        ``(N,)`` or ``(N, T)`` labels; members of a group share one uniform per period.

    Returns
    -------
    codes, outcomes, step_probs : arrays of shape ``(R, N, T)``
    """
    mech.check_compatible(panel)
    streams = np.atleast_1d(np.asarray(streams, dtype=np.int64))
    R, N, T = len(streams), panel.n_units, panel.n_periods
    gidx = _group_index(group_ids, N, T)
    units = np.arange(N)
    step = lambda t, w, yh: panel.outcome_step(t, w, yh, units)  # noqa: E731
    codes = np.empty((R, N, T), dtype=np.int64)
    sprob = np.empty((R, N, T))
    y = np.empty((R, N, T))
    if mech.history_free:
        probs = mech.marginal_probs(N, T)  # (N, T, K)
        for t in range(1, T + 1):
            u = _uniforms(seed, streams, N, t, gidx)
            c = _sample(probs[None, :, t - 1], u)
            _check_groups(c, gidx, t)
            codes[..., t - 1] = c
            sprob[..., t - 1] = np.take_along_axis(
                np.broadcast_to(probs[None, :, t - 1], (R, N, probs.shape[-1])), c[..., None], -1)[..., 0]
        for t in range(1, T + 1):
            y[..., t - 1] = step(t, codes[..., :t], y[..., : t - 1])
    else:
        for t in range(1, T + 1):
            probs = mech.step_probs(t, codes[..., : t - 1], y[..., : t - 1], units)
            u = _uniforms(seed, streams, N, t, gidx)
            c = _sample(probs, u)
            _check_groups(c, gidx, t)
            codes[..., t - 1] = c
            sprob[..., t - 1] = np.take_along_axis(probs, c[..., None], -1)[..., 0]
            y[..., t - 1] = step(t, codes[..., :t], y[..., : t - 1])
    if validate:
        bad = np.argwhere(~((sprob > 0) & (sprob < 1)))
        if len(bad):
            _, i, t = bad[0]
            raise AssumptionViolation(f"drawn step probability {sprob[tuple(bad[0])]!r} is not in (0, 1)",
                                      unit=int(i), time=int(t) + 1)
    return codes, y, sprob


def draw_panel(mech: AssignmentMechanism, panel: PotentialOutcomePanel, seed: int,
               stream: int = 0, group_ids=None) -> ObservedPanel:
    """Run the experiment once: sequential draws, revealing outcomes along the realized path."""
    codes, y, sp = draw_batch(mech, panel, seed, [stream], group_ids)
    gid = None
    if group_ids is not None:
        gid = np.asarray(group_ids)
        if gid.ndim == 1:
            gid = np.repeat(gid[:, None], panel.n_periods, axis=1)
    return ObservedPanel(codes[0], y[0], sp[0], panel.alphabet, gid)


class SharpNullPanel(PotentialOutcomePanel):
    """Outcome panel imputed under the sharp null: every path reveals ``y_obs``."""

    representation = "sharp-null"

    def __init__(self, observed: ObservedPanel):
        self.alphabet = observed.alphabet
        self.n_units, self.n_periods = observed.outcomes.shape
        self._y = observed.outcomes

    def outcome_step(self, t, paths, y_hist, units=None):
        units = np.arange(self.n_units) if units is None else np.asarray(units)
        return np.broadcast_to(self._y[units, t - 1], np.shape(paths)[:-1]).copy()


def observe(panel: PotentialOutcomePanel, mech: AssignmentMechanism, codes) -> ObservedPanel:
    """The observed panel that a given assignment matrix would produce (no randomness)."""
    codes = np.asarray(codes, dtype=np.int64)
    y = panel.outcomes_along(codes)
    sp = np.empty(codes.shape)
    units = np.arange(panel.n_units)
    for t in range(1, panel.n_periods + 1):
        probs = mech.step_probs(t, codes[:, : t - 1], y[:, : t - 1], units)
        sp[:, t - 1] = np.take_along_axis(probs, codes[:, t - 1 : t], -1)[:, 0]
    return ObservedPanel(codes, y, sp, panel.alphabet)


# ---------------------------------------------------------------------------
# Enumeration (exact oracles)


@dataclass(frozen=True)
class UnitPathTable:
    """Every assignment path of one unit with its sequential probability."""

    paths: np.ndarray  # (M, T) codes
    probs: np.ndarray  # (M,)
    outcomes: np.ndarray  # (M, T)
    step_probs: np.ndarray  # (M, T)


def enumerate_unit_paths(mech: AssignmentMechanism, panel: PotentialOutcomePanel, unit: int,
                         n_periods: int | None = None) -> UnitPathTable:
    """All ``K**T`` paths of ``unit``, their outcomes, and their probabilities under ``mech``."""
    T = panel.n_periods if n_periods is None else n_periods
    k = panel.alphabet.size
    if k**T > MAX_ENUMERATION:
        raise ValidationError(f"enumeration of {k}**{T} paths exceeds {MAX_ENUMERATION}")
    paths = np.array(list(itertools.product(range(k), repeat=T)), dtype=np.int64)
    y = panel.outcomes_along(paths[:, None, :], units=[unit])[:, 0, :]
    sp = np.empty(paths.shape)
    units = np.full(len(paths), unit)
    for t in range(1, T + 1):
        probs = mech.step_probs(t, paths[:, : t - 1], y[:, : t - 1], units)
        sp[:, t - 1] = np.take_along_axis(probs, paths[:, t - 1 : t], -1)[:, 0]
    return UnitPathTable(paths, sp.prod(axis=1), y, sp)


def enumerate_panels(mech: AssignmentMechanism, panel: PotentialOutcomePanel):
    """Yield ``(probability, ObservedPanel)`` over every assignment panel.

    Units are independent under an individualistic mechanism, so the joint
    probability is the product of per-unit path probabilities.
    """
    k, N, T = panel.alphabet.size, panel.n_units, panel.n_periods
    if k ** (N * T) > MAX_ENUMERATION:
        raise ValidationError(f"enumeration of {k}**{N * T} panels exceeds {MAX_ENUMERATION}")
    tables = [enumerate_unit_paths(mech, panel, i) for i in range(N)]
    for combo in itertools.product(*(range(len(tb.probs)) for tb in tables)):
        prob = 1.0
        for tb, m in zip(tables, combo):
            prob *= tb.probs[m]
        if prob == 0.0:
            continue
        yield prob, ObservedPanel(
            np.stack([tb.paths[m] for tb, m in zip(tables, combo)]),
            np.stack([tb.outcomes[m] for tb, m in zip(tables, combo)]),
            np.stack([tb.step_probs[m] for tb, m in zip(tables, combo)]),
            panel.alphabet,
        )


# ---------------------------------------------------------------------------
# Propensities


@dataclass(frozen=True)
class AdaptedPropensity:
    """Probability of a window path given the unit's realized history."""

    value: float
    unit: int
    window_start: int
    window: tuple
    factors: tuple


def adapted_propensity(mech: AssignmentMechanism, unit: int, w_history: Sequence[int],
                       y_history: Sequence[float], window: Sequence[int],
                       window_outcomes: Sequence[float] | None = None,
                       bounds: tuple[float, float] | None = None) -> AdaptedPropensity:
    """Product of per-step probabilities of ``window`` (codes) after the given history.

    ``window_outcomes`` are the outcomes revealed along the window; they are
    needed only by outcome-dependent mechanisms (and only the first ``len - 1``
    are ever read).
    """
    w_hist = [int(c) for c in w_history]
    y_hist = [float(v) for v in y_history]
    if len(w_hist) != len(y_hist):
        raise ValidationError("assignment and outcome histories must have equal length")
    window = tuple(int(c) for c in window)
    if window_outcomes is None:
        window_outcomes = [0.0] * len(window)
        if not (mech.history_free or isinstance(mech, MarkovMechanism)):
            raise ValidationError("outcome-dependent mechanisms need the window outcomes")
    if len(window_outcomes) < len(window) - 1:
        raise ValidationError("window_outcomes is too short")
    start = len(w_hist) + 1
    lo, hi = bounds if bounds is not None else (0.0, 1.0)
    factors = []
    for s, code in enumerate(window):
        t = start + s
        wh = np.array(w_hist + list(window[:s]), dtype=np.int64)[None, :]
        yh = np.array(y_hist + [float(v) for v in window_outcomes[:s]])[None, :]
        probs = mech.step_probs(t, wh, yh, np.array([unit]))
        f = float(probs[0, code])
        strict_ok = 0.0 < f < 1.0
        if not strict_ok or f < lo or f > hi:
            raise AssumptionViolation(
                f"step probability {f!r} at unit {unit}, time {t} violates the bounds ({lo}, {hi})",
                unit=unit, time=t)
        factors.append(f)
    return AdaptedPropensity(float(np.prod(factors)), int(unit), start, window, tuple(factors))


def validate_probabilistic(observed: ObservedPanel, bounds: tuple[float, float]) -> list[tuple[int, int, float]]:
    """Every ``(unit, time, prob)`` whose realized step probability leaves ``[C_L, C_U]``."""
    lo, hi = bounds
    sp = observed.step_probs
    bad = np.argwhere((sp < lo) | (sp > hi))
    return [(int(i), int(t) + 1, float(sp[i, t])) for i, t in bad]
