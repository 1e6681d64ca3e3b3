"""String averaging of strictly quasi-nonexpansive operators with extrapolated relaxation."""

from .operators import (OperatorHandle, Property, PropertyCheckReport, RelaxationSpec, StepMode,
                        check_property, generalized_relax, relax)
from .strings import (AveragedOperator, IterationTrace, SolverConfig, StringPlan,
                      TerminalStatus, compare_error_bounds, evaluate_strings, iterate, sigma_max)

__version__ = "0.1.0"

__all__ = [
    "AveragedOperator", "IterationTrace", "OperatorHandle", "Property", "PropertyCheckReport",
    "RelaxationSpec", "SolverConfig", "StepMode", "StringPlan", "TerminalStatus",
    "check_property", "compare_error_bounds", "evaluate_strings", "generalized_relax",
    "iterate", "relax", "sigma_max",
]
