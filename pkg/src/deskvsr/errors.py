"""Exception types shared across the package."""


class DeskVSRError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(DeskVSRError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " vs ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BackwardError(DeskVSRError, RuntimeError):
    pass


# serialization
class SerializationError(DeskVSRError):
    pass


class BadMagic(SerializationError):
    pass


class Truncated(SerializationError):
    pass


class BadHeader(SerializationError):
    """Unsupported version, dtype code or ndim in a VSRT header."""


# data pipeline
class MissingFrame(DeskVSRError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"missing frame index {index}")


class FrameShapeMismatch(DeskVSRError, ValueError):
    pass


class ConfigError(DeskVSRError, ValueError):
    pass


class TrainingDiverged(DeskVSRError, RuntimeError):
    def __init__(self, iteration, lrs, grad_norms, loss):
        self.iteration = iteration
        self.lrs = dict(lrs)
        self.grad_norms = dict(grad_norms)
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at iteration {iteration}; lr={self.lrs}; "
            f"grad norms={self.grad_norms}"
        )


class MissingGradient(DeskVSRError, RuntimeError):
    pass
