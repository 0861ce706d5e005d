class ShapeError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    """Raised by the Cholesky kernels; ``pivot`` is the 0-based failing diagonal index."""

    def __init__(self, pivot: int, value: float, group: int | None = None):
        self.pivot = pivot
        self.value = value
        self.group = group
        where = f"pivot {pivot}" if group is None else f"pivot {pivot} of group {group}"
        super().__init__(
            f"matrix is not positive definite: non-positive {where} ({value!r}); "
            "regularize with eps * I before factorizing"
        )


class SingularTriangularError(ValueError):
    def __init__(self, index: int, group: int | None = None):
        self.index = index
        self.group = group
        where = f"index {index}" if group is None else f"index {index} of group {group}"
        super().__init__(f"triangular matrix has a zero diagonal entry at {where}")


class NonFiniteError(FloatingPointError):
    pass


class DataFormatError(ValueError):
    """Malformed dataset file; ``offset`` is the byte offset of the bad record when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message)


class CheckpointError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch, self.step, self.loss = epoch, step, loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
