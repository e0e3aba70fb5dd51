"""Exception types shared across the package."""


class NotFiniteError(ValueError):
    """An array fed to a numerical operation contains NaN or Inf."""


class ShapeError(ValueError):
    """Matrix/vector dimensions are inconsistent with the operation."""


class SymmetryError(ValueError):
    """A matrix required to be symmetric deviates beyond tolerance."""


class EpsilonError(ValueError):
    """Requested contraction rate is inadmissible for the current spread ratio.

    Carries ``max_epsilon``, the exclusive upper bound ``1 - alpha**2``.
    """

    def __init__(self, message: str, max_epsilon: float):
        super().__init__(message)
        self.max_epsilon = max_epsilon


class CertificateError(ValueError):
    """A contraction certificate is internally inconsistent or unverifiable."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training; names the epoch and batch."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class IdxFormatError(ValueError):
    """An IDX file is malformed; names the file and byte offset."""

    def __init__(self, message: str, path: str = "", offset: int = -1):
        super().__init__(message)
        self.path = path
        self.offset = offset
