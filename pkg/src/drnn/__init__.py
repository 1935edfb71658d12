"""Delayed recurrent networks and the flattening of stacked recurrent nets."""
from .cells import LstmParams, OutputParams, RnnParams, activation
from .flatten import (FlattenedNet, LiftError, flatten, forward_derived_init,
                      lift_initial_state, verify_equivalence)
from .linalg import Rng
from .nets import InitialState, Layer, SeqNet, StackedParams, param_count

__version__ = "0.1.0"

__all__ = [
    "LstmParams", "OutputParams", "RnnParams", "activation", "FlattenedNet", "LiftError",
    "flatten", "forward_derived_init", "lift_initial_state", "verify_equivalence", "Rng",
    "InitialState", "Layer", "SeqNet", "StackedParams", "param_count",
]
