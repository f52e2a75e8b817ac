"""
__init__.py
-----------
This package provides the closed-form photon-pair model and the spontaneous-emission noise fraction.
"""

from .model import (
    BetaInputs,
    ModelComparison,
    ModelCurve,
    ModelParams,
    compare_model_to_analysis,
    compute_beta,
    g_ideal,
    g_model,
    model_curve,
    predicted_cauchy_schwarz,
)
