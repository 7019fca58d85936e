"""Exception hierarchy shared across the package."""


class RootCauseError(Exception):
    """Base class for every error raised by rootcf."""


class StructuralError(RootCauseError, ValueError):
    """Malformed graph or structural model."""


class CycleError(StructuralError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("graph contains the cycle " + " -> ".join(map(str, self.cycle)))


class UnsupportedModelError(RootCauseError, ValueError):
    """The requested computation is not defined for this kind of model."""


class InconsistentEvidenceError(RootCauseError, ValueError):
    """Evidence has probability zero under the model."""


class KernelValidationError(RootCauseError, ValueError):
    def __init__(self, desideratum, message):
        self.desideratum = desideratum
        super().__init__(f"{desideratum}: {message}")


class SingularFitError(RootCauseError, ValueError):
    def __init__(self, variable, message="rank-deficient design"):
        self.variable = variable
        super().__init__(f"{message} while fitting variable {variable!r}")


class DegenerateLabelError(RootCauseError, ValueError):
    """Labels contain a single class."""


class ConvergenceError(RootCauseError, RuntimeError):
    def __init__(self, grad_norm, n_iter):
        self.grad_norm = grad_norm
        self.n_iter = n_iter
        super().__init__(
            f"Newton iterations did not converge after {n_iter} steps "
            f"(gradient max-norm {grad_norm:.3e})"
        )


class ConfigError(RootCauseError, ValueError):
    """Invalid user configuration."""


class PipelineError(RootCauseError):
    """A pipeline stage failed; ``stage`` names it and the original error is chained."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
