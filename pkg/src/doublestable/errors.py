"""Exception types shared by the package."""


class ParameterError(ValueError):
    """An argument lies outside its admissible range."""


class NumericalError(ArithmeticError):
    """A recursion produced values that cannot be trusted."""
