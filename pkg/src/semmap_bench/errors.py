"""Exception hierarchy shared across the harness."""


class BenchError(Exception):
    """Base class for all harness errors."""


class ParseError(BenchError):
    """A document could not be parsed (syntax level)."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class SchemaError(BenchError):
    """A document parsed but violates the expected schema or an invariant."""

    def __init__(self, message, path=None, field=None):
        self.path = path
        self.field = field
        prefix = f"{path}: " if path is not None else ""
        if field:
            prefix += f"[{field}] "
        super().__init__(prefix + message)


class PlyFormatError(BenchError):
    """Unsupported or inconsistent PLY header."""


class ContractError(BenchError, ValueError):
    """A caller violated an operation precondition."""


class UndefinedMetricError(BenchError, ArithmeticError):
    """A metric has no defined value for the given inputs."""


class IngestError(BenchError):
    """Input data required for a pipeline stage is missing or empty."""


class ConfigError(BenchError):
    """Run configuration is unreadable or invalid."""
