"""Exception hierarchy.

Every error carries a stable ``code`` used by the CLI when it reports
failures as JSON on stderr.
"""


class FiresaleError(Exception):
    code = "error"


class ValidationError(FiresaleError, ValueError):
    """Invalid input. ``violations`` lists every problem found, not just the first."""

    code = "validation_error"

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ParseError(FiresaleError, ValueError):
    code = "parse_error"

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class ZeroRowError(FiresaleError, ValueError):
    code = "zero_row"

    def __init__(self, banks):
        self.banks = list(banks)
        super().__init__(f"banks with zero total holdings: {self.banks}")


class InconsistentSheetError(FiresaleError, ValueError):
    code = "inconsistent_sheet"


class InvalidStrengthError(FiresaleError, ValueError):
    code = "invalid_strength"


class InfeasibleDegreesError(FiresaleError, ValueError):
    code = "infeasible_degrees"


class InfeasibleSupportError(FiresaleError, ValueError):
    code = "infeasible_support"


class InfeasibleSparsityError(FiresaleError, ValueError):
    code = "infeasible_sparsity"


class MaxIterExceeded(FiresaleError, RuntimeError):
    code = "max_iter_exceeded"

    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


class ConvergenceError(FiresaleError, RuntimeError):
    code = "convergence_error"

    def __init__(self, message, residual_trace=()):
        self.residual_trace = list(residual_trace)
        last = f" (last residual {self.residual_trace[-1]:.3e})" if self.residual_trace else ""
        super().__init__(message + last)


class NonUniformShockError(FiresaleError, ValueError):
    code = "non_uniform_shock"


class NonUniformLiquidityError(FiresaleError, ValueError):
    code = "non_uniform_liquidity"


class InsufficientSamplesError(FiresaleError, ValueError):
    code = "insufficient_samples"


class MissingQuarterError(FiresaleError, KeyError):
    code = "missing_quarter"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TooFewBanksError(FiresaleError, ValueError):
    code = "too_few_banks"
