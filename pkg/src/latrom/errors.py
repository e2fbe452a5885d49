"""Exception hierarchy shared by every module."""


class ContractError(ValueError):
    """A caller violated an operation's preconditions."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class NonFiniteError(ContractError):
    """A NaN or Inf showed up where finite values are required."""


class DivergenceError(RuntimeError):
    """An optimization blew up (NaN loss or runaway growth)."""


class FormatError(OSError):
    """An on-disk artifact is malformed or inconsistent with its manifest."""
