class ShapeError(ValueError):
    """Raised when tensor shapes violate an operator's contract."""


class FormatError(ValueError):
    """Raised when an MST1 file or parameter manifest cannot be decoded."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, step, losses):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.losses = losses
