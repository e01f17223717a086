"""Local treatment-effect estimation under a binary instrumental variable.

The package implements a variation-independent parameterization of the
binary instrument / binary treatment / binary outcome observed-data law,
maximum-likelihood and doubly robust estimators of conditional complier
effects on the additive and multiplicative scales, a set of comparator
estimators, and a simulation / bootstrap / Monte Carlo harness with a
command-line front end.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .params import (
    CellProbs,
    ComplierRisks,
    DegenerateStratumError,
    DeltaReport,
    DomainError,
    InstrumentIrrelevantError,
    Margins,
    Scale,
    StructuralPoint,
    check_delta,
    conditional_margins,
    feasible_delta_range,
    forward_map,
    inverse_map,
    solve_complier_risks,
)

__all__ = [
    "__version__",
    "CellProbs",
    "ComplierRisks",
    "DegenerateStratumError",
    "DeltaReport",
    "DomainError",
    "InstrumentIrrelevantError",
    "Margins",
    "Scale",
    "StructuralPoint",
    "check_delta",
    "conditional_margins",
    "feasible_delta_range",
    "forward_map",
    "inverse_map",
    "solve_complier_risks",
]
