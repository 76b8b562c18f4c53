class FragkitError(Exception):
    """Base class for every error raised by fragkit."""

    exit_code = 1

    def __str__(self):
        return self.__class__.__name__ + ': ' + ' '.join(str(a) for a in self.args)


class ContractViolation(FragkitError, ValueError):
    """
    A caller broke an operation's precondition (shapes, ranges, sizes).
    """
    exit_code = 1


class ShapeError(ContractViolation):
    pass


class NonFiniteError(ContractViolation):
    """NaN or Inf showed up in a tensor."""


class EmptyDatasetError(ContractViolation):
    pass


class TrainingDiverged(ContractViolation):
    """Loss became non-finite during training."""

    def __init__(self, batch_index: int, message: str = ""):
        self.batch_index = batch_index
        super().__init__(f"non-finite loss at batch {batch_index}" + (f" ({message})" if message else ""))


class FormatError(FragkitError):
    """
    Problem with an input file format.
    In other words, the file does not conform to the expected layout.
    """
    exit_code = 2


class PPMDecodeError(FormatError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class ManifestError(FormatError):
    pass


class CheckpointError(FormatError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class UsageError(FragkitError):
    """Bad command line: unknown subcommand, flag or config key."""
    exit_code = 1
