"""Exception types shared across the package."""


class TorsoNetError(Exception):
    pass


class ShapeError(TorsoNetError, ValueError):
    pass


class ArgumentError(TorsoNetError, ValueError):
    pass


class NumericError(TorsoNetError, ArithmeticError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DivergedError(NumericError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class StateError(TorsoNetError, RuntimeError):
    pass


class BuildError(TorsoNetError, ValueError):
    pass


class FormatError(TorsoNetError, ValueError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class CorruptionError(FormatError):
    pass


class DatasetError(TorsoNetError, ValueError):
    pass
