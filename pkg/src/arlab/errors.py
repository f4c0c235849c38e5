"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    pass


class InvalidConfigError(ValueError):
    pass


class NumericalError(ArithmeticError):
    """An iterative routine hit its iteration cap.

    ``residual`` holds the last measured convergence residual.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class UndefinedMetricError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class RegionExplosionError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


class InfeasibleConfigError(ValueError):
    pass
