"""Exception taxonomy shared by the library and the CLI.

Every error carries the process exit code the CLI reports for it:
1 = usage, 2 = format, 3 = numeric.
"""


class ChannelfoldError(Exception):
    exit_code = 1


# Usage / domain problems (exit 1)
class UsageError(ChannelfoldError):
    exit_code = 1


class DomainError(ChannelfoldError):
    exit_code = 1


class UnknownLayerError(ChannelfoldError, KeyError):
    exit_code = 1

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown layer"


class TopologyError(ChannelfoldError):
    exit_code = 1


# Format problems (exit 2)
class FormatError(ChannelfoldError):
    exit_code = 2


class ParseError(FormatError):
    pass


class BoundsError(FormatError):
    pass


class ValidationError(FormatError):
    pass


class ShapeError(FormatError, ValueError):
    pass


# Numeric problems (exit 3)
class NumericError(ChannelfoldError):
    exit_code = 3


class SingularityError(NumericError):
    pass


class DivergenceError(NumericError):
    pass
