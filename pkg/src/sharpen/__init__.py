"""Maximum-likelihood sharpening at desk scale.

Exact tabular and linear-softmax language models, a budget-accounted
sample-and-evaluate oracle, best-of-N / SFT / RLHF sharpening algorithms,
and the diagnostics needed to check them against their guarantees.
"""
from .errors import (BudgetExhausted, CapacityError, ConfigError, ConvergenceError, DomainError, InputError,
                     SelectionError, SharpenError, StateError, ValidationError)
from .models import (AutoregressiveTabularModel, ConditionalModel, LinearSoftmaxModel, PromptDistribution,
                     PromptSpace, ResponseSpace, TabularModel)
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "AutoregressiveTabularModel", "BudgetExhausted", "CapacityError", "ConditionalModel", "ConfigError",
    "ConvergenceError", "DomainError", "InputError", "LinearSoftmaxModel", "PromptDistribution", "PromptSpace",
    "ResponseSpace", "RngStream", "SelectionError", "SharpenError", "StateError", "TabularModel",
    "ValidationError", "__version__",
]
