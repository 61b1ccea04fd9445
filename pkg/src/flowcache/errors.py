"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes or state layouts do not line up."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericError(ArithmeticError):
    """Non-finite numbers where finite ones are required."""


class NumericDivergenceError(NumericError):
    """Integration produced a non-finite or exploding state."""

    def __init__(self, step, message=None, trajectory=None):
        self.step = step
        self.trajectory = trajectory
        if message is None:
            message = f"state diverged at step {step}"
        if trajectory is not None:
            message = f"trajectory {trajectory}: {message}"
        super().__init__(message)


class CacheUsageError(RuntimeError):
    """Cache operations called out of order (empty cache, non-monotone steps)."""


class ConfigError(ValueError):
    """Experiment configuration could not be parsed or validated."""
