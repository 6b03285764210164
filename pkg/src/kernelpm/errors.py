"""Exception hierarchy shared across the package."""


class KernelPMError(Exception):
    """Base class for all errors raised by kernelpm."""


class InvalidLatticeError(KernelPMError, ValueError):
    pass


class ConfigLengthError(KernelPMError, ValueError):
    pass


class SignViolationError(KernelPMError, ArithmeticError):
    """The propagated amplitude at a configuration is not strictly positive."""

    def __init__(self, message, config=None, value=None):
        super().__init__(message)
        self.config = config
        self.value = value


class AmplitudeOverflowError(KernelPMError, OverflowError):
    pass


class InconsistentDatasetError(KernelPMError, ValueError):
    pass


class FactorizationError(KernelPMError, ArithmeticError):
    def __init__(self, message, lambdas=()):
        super().__init__(message)
        self.lambdas = tuple(lambdas)


class SamplingError(KernelPMError, ArithmeticError):
    def __init__(self, message, config=None):
        super().__init__(message)
        self.config = config


class ConvergenceError(KernelPMError, ArithmeticError):
    pass


class SingularNoiseError(KernelPMError, ArithmeticError):
    pass


class StepFailedError(KernelPMError):
    """An SLPM iteration failed; ``partial`` holds the records produced so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
