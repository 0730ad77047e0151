"""Exception types shared across the package."""


class ZorefineError(Exception):
    """Base class for all package errors."""


class LengthMismatch(ZorefineError):
    """Flat vector length does not match the parameter template."""


class ShapeMismatch(ZorefineError):
    """Two layered parameter values do not share the same layer structure."""


class NonFiniteLoss(ZorefineError):
    """An objective evaluation returned NaN or infinity."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class NotPSD(ZorefineError):
    """Matrix supplied for a quadratic objective is not positive semidefinite."""


class GradUnavailable(ZorefineError):
    """Operation requires an exact gradient but the objective has none."""


class ActivationsUnavailable(ZorefineError):
    """Operation requires layer activations but the objective exposes none."""


class ActivationNoiseOnAnalyticObjective(ZorefineError):
    """Activation noise requested for an objective without hidden activations."""


class BadM(ZorefineError):
    """Top-m selection size is outside [1, number of layers]."""


class MissingLipschitzConstant(ZorefineError):
    """Objective descriptor does not certify the Lipschitz constant."""


class StepsizeTooLarge(ZorefineError):
    """Stepsize exceeds the cap required by the convergence recursion."""


class StepsizeAboveCap(ZorefineError):
    """Stepsize exceeds the one-step robustness improvement cap."""


class NotStationary(ZorefineError):
    """Reference point is not a stationary point of the objective."""


class DomainExit(ZorefineError):
    """Iterates left the compact domain on which constants were certified."""


class ConfigError(ZorefineError):
    """Pipeline configuration is malformed or inconsistent."""


class StageError(ZorefineError):
    """A pipeline stage failed; carries the stage tag."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
