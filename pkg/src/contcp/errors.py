"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    pass


class InvalidWeightError(InvalidInputError):
    pass


class PositivityError(ValueError):
    """A density evaluated to zero (or a non-finite value) where positivity is required."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InconsistentSolutionError(RuntimeError):
    """KKT stationarity cannot be met inside the box: the primal point was not optimal."""


class ConvergenceError(RuntimeError):
    pass


class DegenerateTiltError(RuntimeError):
    pass


class InsufficientDataError(ValueError):
    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
