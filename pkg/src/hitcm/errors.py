"""Exception types shared across the toolkit."""


class HitError(Exception):
    """Base class for every error raised deliberately by hitcm."""


class ShapeError(HitError, ValueError):
    pass


class ContractError(HitError, RuntimeError):
    """A documented precondition or postcondition was violated."""


class ConfigError(HitError, ValueError):
    pass


class ParseError(HitError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class AlignmentError(ParseError):
    pass


class StateError(HitError, RuntimeError):
    pass


class IncompatibleCheckpointError(HitError, ValueError):
    def __init__(self, mismatches: list[str]):
        self.mismatches = list(mismatches)
        super().__init__("incompatible checkpoint arrays: " + "; ".join(self.mismatches))


class NaNLossError(HitError, FloatingPointError):
    def __init__(self, epoch: int, batch_index: int):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")


class UnsupportedHeadError(HitError, ValueError):
    pass
