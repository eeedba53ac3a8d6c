"""Exception types shared by the inference modules."""


class InferenceError(ValueError):
    """Raised when the observations are incompatible with the model."""


class NumericalInstabilityError(FloatingPointError):
    def __init__(self, message, interval=None):
        super().__init__(message if interval is None else f"{message} (interval {interval})")
        self.interval = interval


class StateError(RuntimeError):
    """Raised when an operation runs before its prerequisites."""


class ResourceBudgetError(MemoryError):
    """Raised when a requested computation exceeds the configured budget."""


class KernelUnavailableError(NotImplementedError):
    """No closed-form memory kernel exists for this holding-time family."""
