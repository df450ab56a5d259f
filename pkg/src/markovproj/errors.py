class ConfigError(ValueError):
    """Invalid model, grid or experiment configuration."""


class NumericalError(RuntimeError):
    """A numerical routine hit a non-finite value or broke an invariant."""


class StepSizeError(NumericalError):
    """Time step too large for an explicit part of a scheme."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(f"{message}; suggested dt <= {suggested_dt:.6g}")
        self.suggested_dt = suggested_dt


class ThinningWarning(UserWarning):
    """Jump intensity times step is large enough to bias the thinning sampler."""
