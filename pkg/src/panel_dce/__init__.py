"""Design-based estimation and inference for dynamic causal effects in panel experiments."""

from .errors import AssumptionViolation, NumericalError, ValidationError
from .panel_core import (ARPanelSpec, EffectQuery, LinearPanelSpec, TablePanel, TreatmentAlphabet,
                         true_average_effects, true_lag_p_effect, true_weighted_effect,
                         unroll_ar_to_linear)
from .assignment import (BernoulliMechanism, CategoricalMechanism, MarkovMechanism, ObservedPanel,
                         ThresholdMechanism, adapted_propensity, draw_panel, validate_probabilistic)
from .ht_estimators import EffectEstimate, average_estimates, estimate, ht_cell, ht_weighted_cell
from .inference import conservative_test, fisher_randomization_test, randomization_distribution

__version__ = "0.1.0"

__all__ = [
    "ARPanelSpec", "AssumptionViolation", "BernoulliMechanism", "CategoricalMechanism", "EffectEstimate",
    "EffectQuery", "LinearPanelSpec", "MarkovMechanism", "NumericalError", "ObservedPanel", "TablePanel",
    "ThresholdMechanism", "TreatmentAlphabet", "ValidationError", "adapted_propensity", "average_estimates",
    "conservative_test", "draw_panel", "estimate", "fisher_randomization_test", "ht_cell", "ht_weighted_cell",
    "randomization_distribution", "true_average_effects", "true_lag_p_effect", "true_weighted_effect",
    "unroll_ar_to_linear", "validate_probabilistic",
]
