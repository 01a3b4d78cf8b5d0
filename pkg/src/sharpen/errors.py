class SharpenError(Exception):
    """Base class for all package errors."""


class DomainError(SharpenError, ValueError):
    """Argument outside the declared space or parameter range."""


class ValidationError(SharpenError, ValueError):
    """A model or class violates one of its invariants (e.g. norm bound)."""


class StateError(SharpenError, RuntimeError):
    """Operation not allowed in the current oracle-session state."""


class BudgetExhausted(SharpenError, RuntimeError):
    """A fixed-budget session was asked for more queries than declared."""


class CapacityError(SharpenError, RuntimeError):
    """Enumeration, rejection sampling or a stopping loop exceeded its cap."""


class SelectionError(SharpenError, ValueError):
    """Best-of-N selection could not be carried out (e.g. no answers)."""


class ConvergenceError(SharpenError, RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


class InputError(SharpenError, ValueError):
    """Malformed external input (JSONL files, instance files)."""


class ConfigError(SharpenError, ValueError):
    """Experiment configuration failed schema validation."""
