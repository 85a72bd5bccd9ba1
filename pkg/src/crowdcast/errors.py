"""Exception hierarchy shared across the package."""


class CrowdcastError(Exception):
    """Base class for every error raised by crowdcast."""


# geometry
class EmptySnapshot(CrowdcastError, ValueError):
    pass


# dataio
class ParseError(CrowdcastError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class EmptyFile(CrowdcastError, ValueError):
    pass


class SchemaError(ParseError):
    pass


class ConfigError(CrowdcastError, ValueError):
    pass


# pipeline
class TooFewTrajectories(CrowdcastError, ValueError):
    pass


# autodiff
class ShapeMismatch(CrowdcastError, ValueError):
    pass


class NonFiniteValue(CrowdcastError, FloatingPointError):
    pass


class NotScalarOutput(CrowdcastError, ValueError):
    pass


# model
class EmptyScene(CrowdcastError, ValueError):
    pass


# metrics / train
class EmptySet(CrowdcastError, ValueError):
    pass


class EmptyDataset(EmptySet):
    pass


class TrainingDiverged(CrowdcastError, FloatingPointError):
    pass


class CheckpointError(CrowdcastError, ValueError):
    pass
