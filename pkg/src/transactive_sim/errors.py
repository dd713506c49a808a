"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI prints
alongside the message.
"""


class SimError(Exception):
    code = "E_SIM"


class UsageError(SimError, ValueError):
    code = "E_USAGE"


class CommandError(UsageError):
    """A device command outside its rating."""

    code = "E_COMMAND"


class LineLimitError(SimError):
    code = "E_LINE_LIMIT"

    def __init__(self, line, flow_kw, capacity_kw, message=None):
        self.line = line
        self.flow_kw = flow_kw
        self.capacity_kw = capacity_kw
        self.overload_kw = abs(flow_kw) - capacity_kw
        super().__init__(
            message
            or f"line {line} carries {abs(flow_kw):.6f} kW over capacity "
            f"{capacity_kw:.6f} kW (overload {self.overload_kw:.6f} kW)"
        )


class NumericError(SimError, ArithmeticError):
    code = "E_NUMERIC"


class InfeasibleError(SimError):
    code = "E_INFEASIBLE"

    def __init__(self, constraint, message):
        self.constraint = constraint
        super().__init__(f"{constraint}: {message}")


class PriceRejectedError(SimError, ValueError):
    code = "E_PRICE_REJECTED"


class NoPaybackError(SimError, ValueError):
    code = "E_NO_PAYBACK"


class ConfigError(SimError, ValueError):
    """Scenario file failed validation; ``errors`` lists every violation."""

    code = "E_SCHEMA"

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
