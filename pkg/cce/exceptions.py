"""
Exceptions raised by cce.

Every error carries the exit code the command-line interface reports for it:
1 for usage errors, 2 for validation errors, 3 for numerical failures and 4 for
corrupt checkpoints.
"""

EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_CORRUPT_CHECKPOINT = 4


class CCEError(Exception):
    """Base class of all cce errors."""

    exit_code = EXIT_VALIDATION


class UsageError(CCEError):
    exit_code = EXIT_USAGE


class ConfigError(CCEError, ValueError):
    exit_code = EXIT_VALIDATION


class ShapeError(CCEError, ValueError):
    exit_code = EXIT_VALIDATION


class PlanningError(CCEError, ValueError):
    """Raised when the global budget cannot hold the end-layer floors."""

    exit_code = EXIT_VALIDATION

    def __init__(self, message, binding_layers=()):
        super().__init__(message)
        self.binding_layers = tuple(binding_layers)


class CheckpointError(CCEError, ValueError):
    exit_code = EXIT_CORRUPT_CHECKPOINT


class ChecksumError(CheckpointError):
    pass


class NumericalError(CCEError, ArithmeticError):
    exit_code = EXIT_NUMERICAL


class DecompositionError(NumericalError):
    pass


class ScheduleDivergenceError(NumericalError):
    """Raised when the reconstruction loss grows by more than the ceiling between two schedule steps."""

    def __init__(self, message, step, previous_loss, current_loss):
        super().__init__(message)
        self.step = step
        self.previous_loss = previous_loss
        self.current_loss = current_loss


class FineTuneError(NumericalError):

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class GradientCheckError(NumericalError):

    def __init__(self, message, worst_entry):
        super().__init__(message)
        self.worst_entry = worst_entry


class TrainingError(NumericalError):

    def __init__(self, message, perplexity):
        super().__init__(message)
        self.perplexity = perplexity
