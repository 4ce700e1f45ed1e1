"""Exception taxonomy shared across the library and the CLI.

The CLI maps these onto exit codes: UsageError -> 1, SchemaError /
ValidationError -> 2, NumericError and failed gradient checks -> 3.
"""


class MvrbmError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(MvrbmError):
    """A call or command was made with arguments that make no sense."""


class SchemaError(MvrbmError):
    """Structural mismatch between a record/parameter set and a schema."""


class ValidationError(MvrbmError):
    """Well-formed structure but invalid content (non-finite, bad version)."""


class ConfigError(MvrbmError):
    """Invalid training configuration."""


class OracleRefusal(MvrbmError):
    """The exact oracle refuses a model outside its enumerable bounds."""


class NumericError(MvrbmError):
    """Numerical failure (divergence, non-finite parameters)."""
