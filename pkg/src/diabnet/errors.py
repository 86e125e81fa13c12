"""Exception types raised across the pipeline."""


class DiabnetError(ValueError):
    """Base class for every error raised by this package."""


class ShapeError(DiabnetError):
    pass


class EmptyInputError(DiabnetError):
    pass


class DegenerateColumnError(DiabnetError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column!r} is degenerate (zero variance or no usable values)")


class SchemaError(DiabnetError):
    pass


class ParseError(DiabnetError):
    def __init__(self, row, column, value, path=None):
        self.row = row
        self.column = column
        self.value = value
        where = f"{path}: " if path else ""
        super().__init__(f"{where}row {row}, column {column!r}: cannot parse {value!r} as a number")


class LabelError(DiabnetError):
    pass


class ImbalanceError(DiabnetError):
    pass


class SplitError(DiabnetError):
    pass


class FoldError(DiabnetError):
    pass


class DimensionError(DiabnetError):
    pass


class ConfigError(DiabnetError):
    pass


class BatchSizeError(DiabnetError):
    pass


class DivergenceError(DiabnetError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
