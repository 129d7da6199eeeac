"""Exception hierarchy shared by all modules."""


class HeroFilterError(Exception):
    """Base class for every error raised by this package."""


class FormatError(HeroFilterError):
    """A dataset or checkpoint file is missing or malformed."""


class ShapeError(HeroFilterError, ValueError):
    """Array dimensions do not agree."""


class SizeError(HeroFilterError, ValueError):
    """A size parameter is out of range (e.g. patch size larger than n)."""


class NumericalError(HeroFilterError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""


class DegenerateError(HeroFilterError, ValueError):
    """The input makes the requested quantity undefined (empty set, zero sum)."""


class SingularSpectrumError(HeroFilterError, ValueError):
    """A zero eigenvalue where the construction requires a nonzero one."""


class StateError(HeroFilterError, RuntimeError):
    """An object was used in a state it is no longer valid for."""


class ParamError(HeroFilterError, ValueError):
    """Invalid or infeasible configuration parameters."""
