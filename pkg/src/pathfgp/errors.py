"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command line
front end can translate failures without a lookup table.
"""


class PathfgpError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ParseError(PathfgpError):
    exit_code = 2


class DomainError(PathfgpError):
    exit_code = 3


class ConfigError(PathfgpError):
    exit_code = 4


class NumericalError(PathfgpError):
    """A numerical prerequisite of a construction does not hold."""

    exit_code = 5


# -- ingestion --------------------------------------------------------------

class MalformedRow(ParseError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"malformed row at line {line}" + (f": {reason}" if reason else ""))


class NonFiniteValue(ParseError):
    def __init__(self, line: int, column: int, text: str = ""):
        self.line, self.column = line, column
        super().__init__(f"non-finite or non-numeric value {text!r} at line {line}, column {column}")


class NonPositiveTotalCap(DomainError):
    def __init__(self, time):
        self.time = time
        super().__init__(f"total capitalization is not positive at t={time}")


class InsufficientHistory(DomainError):
    pass


class PartitionOffGrid(DomainError):
    def __init__(self, time):
        self.time = time
        super().__init__(f"partition point {time} is not on the data grid")


class DeltaNotOnGrid(DomainError):
    pass


class UnsupportedKind(ConfigError):
    pass


# -- functionals ------------------------------------------------------------

class DomainViolation(DomainError):
    def __init__(self, i, reason: str = ""):
        self.i = i
        super().__init__(f"coordinate {i} leaves the functional's domain" + (f": {reason}" if reason else ""))


class AtOrigin(DomainError):
    def __init__(self):
        super().__init__("horizontal derivatives are set to zero at the time origin")


class LengthMismatch(ConfigError):
    pass


class MissingCovariation(ConfigError):
    pass


class MissingAux(ConfigError):
    pass


class InitialConditionViolated(DomainError):
    def __init__(self, i, value, bound):
        self.i, self.value, self.bound = i, value, bound
        super().__init__(f"initial weight of asset {i} is {value:.6g} > {bound:.6g}")


class RatioBoundBreached(DomainError):
    def __init__(self, t, i, ratio, zeta):
        self.t, self.i = t, i
        super().__init__(f"weight ratio {ratio:.6g} of asset {i} at t={t} is not below zeta={zeta}")


class InsufficientPreHistory(DomainError):
    pass


class NonnegativityBreached(NumericalError):
    def __init__(self, t, value):
        self.t, self.value = t, value
        super().__init__(f"generating functional is negative ({value:.6g}) at t={t}")


# -- strategies -------------------------------------------------------------

class GNotBoundedAwayFromZero(NumericalError):
    def __init__(self, t, value, floor):
        self.t = t
        super().__init__(f"G={value:.3g} at t={t} is below the floor {floor:.3g}")


class NonpositiveValueForWeights(NumericalError):
    def __init__(self, t):
        self.t = t
        super().__init__(f"strategy value is not positive at t={t}; weights undefined")


class WeightsUndefined(NonpositiveValueForWeights):
    pass


class MissingLowerBoundCompanion(ConfigError):
    pass


class NormalizationImpossible(NumericalError):
    pass


class EmptySeries(PathfgpError):
    exit_code = 5
