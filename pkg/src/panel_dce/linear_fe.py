"""Fixed-effects estimators with within transforms, and their probability limits.

Notation: ``C = I - 11'/T`` demeans a length-``T`` vector; ``m_i = E[W_i]`` and
``M_i = E[W_i W_i']`` are the first and second moments of unit ``i``'s
assignment path. The limits below are for ``N -> infinity`` with ``T`` fixed
and potential outcomes held at the supplied linear panel.

Unit fixed effects
    ``sum_it Y_it W_check_it / sum_it W_check_it**2`` with ``W_check = C W``.
    Its limit splits into the contemporaneous term
    ``sum_t avg_i beta_{i,t,0} (M_i C)_{t,t}``, the carryover term
    ``sum_t sum_{s<t} avg_i beta_{i,t,t-s} (M_i C)_{s,t}`` and the
    counterfactual term ``sum_t avg_i Y_it(0) (C m_i)_t``, each over
    ``sum_t avg_i (C M_i C)_{t,t}``.

Two-way fixed effects
    Same structure with ``W_dotcheck -> C (W_i - m_bar)``, ``m_bar = avg_i m_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import AssignmentMechanism, CategoricalMechanism, MarkovMechanism, ObservedPanel
from .errors import NumericalError, ValidationError
from .panel_core import ARPanelSpec, LinearPanelSpec, unroll_ar_to_linear

DENOM_TOL = 1e-14


@dataclass(frozen=True)
class WithinTransforms:
    dot: np.ndarray  # minus the period mean
    check: np.ndarray  # minus the unit mean
    dotcheck: np.ndarray  # minus both, plus the grand mean


def within_transforms(a) -> WithinTransforms:
    """Within-period, within-unit and two-way demeaning of ``(..., N, T)`` arrays."""
    a = np.asarray(a, dtype=np.float64)
    col = a.mean(axis=-2, keepdims=True)
    row = a.mean(axis=-1, keepdims=True)
    grand = a.mean(axis=(-2, -1), keepdims=True)
    return WithinTransforms(a - col, a - row, a - row - col + grand)


def _numeric(observed: ObservedPanel) -> np.ndarray:
    if not observed.alphabet.is_numeric:
        raise ValidationError("fixed-effects estimators need numeric treatment labels")
    return observed.numeric_assignments()


def _ratio(num, den):
    den = np.asarray(den)
    if np.any(np.abs(den) <= DENOM_TOL):
        raise NumericalError("fixed-effects denominator is zero (no within variation in treatment)")
    return num / den


def unit_fe_batch(w, y) -> np.ndarray:
    """Unit fixed-effects slope for each leading index of ``(..., N, T)`` arrays."""
    wc = within_transforms(w).check
    return _ratio((np.asarray(y) * wc).sum(axis=(-2, -1)), (wc * wc).sum(axis=(-2, -1)))


def twoway_fe_batch(w, y) -> np.ndarray:
    """Two-way fixed-effects slope for each leading index of ``(..., N, T)`` arrays."""
    wdc = within_transforms(w).dotcheck
    return _ratio((np.asarray(y) * wdc).sum(axis=(-2, -1)), (wdc * wdc).sum(axis=(-2, -1)))


def unit_fe_estimate(observed: ObservedPanel) -> float:
    """Slope from regressing outcomes on treatment with unit fixed effects."""
    return float(unit_fe_batch(_numeric(observed), observed.outcomes))


def twoway_fe_estimate(observed: ObservedPanel) -> float:
    """Slope from regressing outcomes on treatment with unit and period fixed effects."""
    return float(twoway_fe_batch(_numeric(observed), observed.outcomes))


def repeated_cross_section_estimate(observed: ObservedPanel, t: int) -> np.ndarray:
    """Cross-sectional OLS at period ``t`` of outcomes on all own treatment lags.

    Returns coefficients on ``(W_t, W_{t-1}, ..., W_1)``, i.e. lags ``0..t-1``,
    with both sides demeaned across units.
    """
    w = _numeric(observed)
    n, T = w.shape
    if not 1 <= t <= T:
        raise ValidationError(f"time {t} outside 1..{T}")
    if n <= t:
        raise ValidationError(f"need more units than regressors (N={n}, t={t})")
    x = w[:, :t][:, ::-1]
    x = x - x.mean(axis=0)
    y = observed.outcomes[:, t - 1] - observed.outcomes[:, t - 1].mean()
    gram = x.T @ x
    if np.linalg.matrix_rank(gram) < t:
        raise NumericalError(f"cross-sectional design at time {t} is singular")
    return np.linalg.solve(gram, x.T @ y)


# ---------------------------------------------------------------------------
# Assignment moments


@dataclass(frozen=True)
class MechanismMoments:
    """First and second moments of assignment paths.

    ``m`` has shape ``(n, T)`` and ``M`` shape ``(n, T, T)``, where ``n`` is 1
    for mechanisms identical across units and ``N`` otherwise.
    """

    m: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.m, dtype=np.float64))
        M = np.asarray(self.M, dtype=np.float64)
        if M.ndim == 2:
            M = M[None]
        if M.shape != m.shape + (m.shape[-1],):
            raise ValidationError("second-moment array must have shape (n, T, T) matching m")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "M", M)

    @property
    def n_periods(self) -> int:
        return self.m.shape[-1]

    @property
    def centering(self) -> np.ndarray:
        T = self.n_periods
        return np.eye(T) - np.full((T, T), 1.0 / T)

    @property
    def cov(self) -> np.ndarray:
        """``Cov(W_s, W_t)`` per unit."""
        return self.M - self.m[:, :, None] * self.m[:, None, :]

    @property
    def check_cov(self) -> np.ndarray:
        """``Cov(W_check_s, W_check_t)`` per unit."""
        C = self.centering
        return C @ self.cov @ C

    @property
    def check_cross(self) -> np.ndarray:
        """``E[W_s W_check_t]`` per unit, indexed ``[s, t]``."""
        return self.M @ self.centering

    @property
    def check_sigma2(self) -> np.ndarray:
        """``E[W_check_t**2]`` per unit."""
        C = self.centering
        return np.einsum("...tt->...t", C @ self.M @ C)

    @property
    def mu_dot(self) -> np.ndarray:
        """Mean of the within-period transformed assignment ``m_i - m_bar``."""
        return self.m - self.m.mean(axis=0)

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "M": self.M.tolist()}


def bernoulli_moments(probabilities, T: int, values=(0.0, 1.0)) -> MechanismMoments:
    """Moments of independent binary draws with treatment probability ``probabilities``.

    ``probabilities`` is a scalar, ``(T,)`` or ``(N, T)``.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValidationError("probabilities must lie in [0, 1]")
    if p.ndim == 0:
        p = np.full((1, T), float(p))
    elif p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] != T:
        raise ValidationError(f"probabilities must be a scalar, ({T},) or (N, {T})")
    v0, v1 = map(float, values)
    m = v0 + (v1 - v0) * p
    sq = v0**2 + (v1**2 - v0**2) * p
    M = m[:, :, None] * m[:, None, :]
    idx = np.arange(T)
    M[:, idx, idx] = sq
    return MechanismMoments(m, M)


def categorical_moments(mech: CategoricalMechanism, T: int, values, n_units: int = 1) -> MechanismMoments:
    probs = mech.marginal_probs(n_units, T)  # (N, T, K)
    v = np.asarray(values, dtype=np.float64)
    m = probs @ v
    sq = probs @ (v**2)
    M = m[:, :, None] * m[:, None, :]
    idx = np.arange(T)
    M[:, idx, idx] = sq
    return MechanismMoments(m, M)


def markov_moments(transition, initial, T: int, values=(0.0, 1.0)) -> MechanismMoments:
    """Exact path moments of a Markov chain assignment started from ``initial``."""
    P = np.asarray(transition, dtype=np.float64)
    pi0 = np.asarray(initial, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-12):
        raise ValidationError("transition must be a square row-stochastic matrix")
    if pi0.shape != (P.shape[0],) or np.any(pi0 < 0) or abs(pi0.sum() - 1) > 1e-12:
        raise ValidationError("initial must be a probability vector matching the transition matrix")
    v = np.asarray(values, dtype=np.float64)
    if v.shape != pi0.shape:
        raise ValidationError("values must have one entry per state")
    powers = [np.eye(len(v))]
    for _ in range(T - 1):
        powers.append(powers[-1] @ P)
    pis = np.array([pi0 @ powers[t] for t in range(T)])  # marginal law of W_{t+1}
    m = pis @ v
    M = np.empty((T, T))
    for s in range(T):
        M[s, s] = pis[s] @ (v**2)
        for t in range(s + 1, T):
            M[s, t] = M[t, s] = (pis[s] * v) @ powers[t - s] @ v
    return MechanismMoments(m[None], M[None])


def moments_for(mech: AssignmentMechanism, T: int, values=(0.0, 1.0), n_units: int = 1) -> MechanismMoments:
    """Closed-form moments for the mechanism kinds that have them."""
    if isinstance(mech, MarkovMechanism):
        return markov_moments(mech.transition, mech.initial, T, values)
    if isinstance(mech, CategoricalMechanism):
        per_unit = mech.probabilities.ndim == 3
        return categorical_moments(mech, T, values, n_units if per_unit else 1)
    raise ValidationError(f"no closed-form moments for mechanism kind {mech.kind!r}")


# ---------------------------------------------------------------------------
# Probability limits


def _as_linear(spec) -> LinearPanelSpec:
    if isinstance(spec, ARPanelSpec):
        return unroll_ar_to_linear(spec)
    if not isinstance(spec, LinearPanelSpec):
        raise ValidationError("probability limits need a linear or autoregressive panel")
    return spec


def _time_indexed_beta(spec: LinearPanelSpec) -> np.ndarray:
    """``B[i, t, r] = beta[i, t, t - r]`` for ``r <= t`` (0-based periods), zero above."""
    dense = spec.dense_beta()
    T = spec.n_periods
    out = np.zeros_like(dense)
    for t in range(T):
        out[:, t, : t + 1] = dense[:, t, t::-1]
    return out


def _check_dims(spec, moments):
    if moments.n_periods != spec.n_periods:
        raise ValidationError(f"moments cover {moments.n_periods} periods, panel has {spec.n_periods}")
    if moments.m.shape[0] not in (1, spec.n_units):
        raise ValidationError("per-unit moments must match the number of units")


def _decomposition(B, cross, denom_cells, counterfactual):
    """Assemble terms; ``cross[i, t, r]`` multiplies ``B[i, t, r]``."""
    denom = float(np.mean(denom_cells.sum(axis=-1)))
    if abs(denom) <= DENOM_TOL:
        raise NumericalError("probability limit denominator is zero")
    diag = np.einsum("itt->it", B * cross)
    contemporaneous = float(np.mean(diag.sum(axis=-1)))
    carry = float(np.mean((B * cross).sum(axis=(-2, -1)))) - contemporaneous
    cf = float(counterfactual)
    return {
        "total": (contemporaneous + carry + cf) / denom,
        "contemporaneous_term": contemporaneous / denom,
        "carryover_term": carry / denom,
        "counterfactual_term": cf / denom,
        "denominator": denom,
    }


def problimit_unit_fe(spec, moments: MechanismMoments) -> dict:
    """Limit of the unit fixed-effects slope with its three-term decomposition."""
    spec = _as_linear(spec)
    _check_dims(spec, moments)
    C = moments.centering
    B = _time_indexed_beta(spec)
    MC = moments.M @ C  # [i, s, t] = E[W_s W_check_t]
    cross = np.swapaxes(MC, -2, -1)  # [i, t, r]
    denom_cells = np.einsum("itt->it", C @ moments.M @ C)
    cm = moments.m @ C  # (C m_i)_t
    counterfactual = np.mean((spec.epsilon * cm).sum(axis=-1))
    return _decomposition(B, cross, denom_cells, counterfactual)


def problimit_twoway_fe(spec, moments: MechanismMoments) -> dict:
    """Limit of the two-way fixed-effects slope with its three-term decomposition."""
    spec = _as_linear(spec)
    _check_dims(spec, moments)
    C = moments.centering
    B = _time_indexed_beta(spec)
    m = moments.m
    m_bar = m.mean(axis=0)
    cmbar = C @ m_bar
    cm = m @ C
    cross = np.swapaxes(moments.M @ C, -2, -1) - cmbar[None, :, None] * m[:, None, :]
    denom_cells = np.einsum("itt->it", C @ moments.M @ C) - 2 * cm * cmbar + cmbar**2
    counterfactual = np.mean((spec.epsilon * (cm - cmbar)).sum(axis=-1))
    return _decomposition(B, cross, denom_cells, counterfactual)


def problimit_repeated_cross_section(spec, moments: MechanismMoments, t: int) -> dict:
    """Limit of :func:`repeated_cross_section_estimate` at period ``t``.

    Returns the coefficient vector (lags ``0..t-1``) and its counterfactual
    part ``Gamma^{-1} delta``, where ``Gamma`` is the cross-sectional
    covariance of the lag vector and ``delta = avg_i Y_it(0) (m_i - m_bar)``.
    """
    spec = _as_linear(spec)
    _check_dims(spec, moments)
    rev = np.arange(t - 1, -1, -1)
    m = moments.m[:, rev]
    M = moments.M[:, rev][:, :, rev]
    m_bar = m.mean(axis=0)
    gamma = M.mean(axis=0) - np.outer(m_bar, m_bar)
    if np.linalg.matrix_rank(gamma) < t:
        raise NumericalError("cross-sectional treatment covariance is singular")
    beta = spec.dense_beta()[:, t - 1, :t]  # lags 0..t-1, aligned with rev
    if M.shape[0] == 1:
        signal = gamma @ beta.mean(axis=0)
    else:
        signal = np.einsum("irs,is->r", M, beta) / len(beta) - m_bar * np.mean(np.einsum("is,is->i", m, beta))
    eps = spec.epsilon[:, t - 1]
    delta = np.mean(eps[:, None] * (m - m_bar), axis=0) if m.shape[0] > 1 else np.zeros(t)
    coef = np.linalg.solve(gamma, signal + delta)
    return {"total": coef.tolist(), "counterfactual_term": np.linalg.solve(gamma, delta).tolist()}
