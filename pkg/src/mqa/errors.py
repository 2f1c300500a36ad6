"""Exception hierarchy shared by every stage of the pipeline."""


class MQAError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MQAError, ValueError):
    pass


class ContractError(MQAError, ValueError):
    pass


class ParseError(MQAError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ParameterError(MQAError, ValueError):
    pass


class ConfigurationError(MQAError, ValueError):
    pass


class WindowError(DimensionError):
    pass


class SplitError(MQAError, ValueError):
    pass


class TrainingError(MQAError, RuntimeError):
    pass


class FitError(MQAError, ValueError):
    pass


class NumericalError(MQAError, ArithmeticError):
    pass


class CalibrationError(MQAError, ValueError):
    pass


class MetricError(MQAError, ValueError):
    pass


class DataError(MQAError, ValueError):
    pass


class EvaluationError(MQAError, ValueError):
    pass
