"""Exception hierarchy shared by all autopool modules."""


class AutopoolError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(AutopoolError, ValueError):
    """An input array violates its shape or range contract."""


class InvalidParameterError(AutopoolError, ValueError):
    """A scalar or vector parameter is out of its permitted domain."""


class InvalidConfigError(AutopoolError, ValueError):
    """A generator, training, or CLI configuration cannot be satisfied."""


class MissingStrongLabelsError(InvalidInputError):
    """Strong (instance-level) labels were required but not present."""


class TrainingDivergenceError(AutopoolError, FloatingPointError):
    """The training loss became non-finite."""

    def __init__(self, message, batch_index=None, epoch=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.epoch = epoch
