from typing import List, Optional, Sequence, Tuple


class CospecError(Exception):
    """Base class for pipeline errors. `exit_code` is what the CLI returns."""

    exit_code = 2


class ConfigError(CospecError):
    """Bad configuration or command-line usage."""

    exit_code = 1


class PanelDataError(CospecError):
    """Input data cannot be turned into a valid panel."""

    exit_code = 2


class MalformedRowsError(PanelDataError):
    def __init__(self, line_numbers: Sequence[int], reason: str = "malformed values"):
        self.line_numbers = list(line_numbers)
        shown = ", ".join(str(n) for n in self.line_numbers[:20])
        more = f" (+{len(self.line_numbers) - 20} more)" if len(self.line_numbers) > 20 else ""
        super().__init__(f"{reason} on line(s) {shown}{more}")


class DuplicateKeyError(PanelDataError):
    def __init__(self, key: Tuple[str, str, int]):
        self.key = key
        country, sector, year = key
        super().__init__(
            f"conflicting duplicate observation for (country={country}, sector={sector}, year={year})"
        )


class UnknownCodeError(PanelDataError):
    def __init__(self, kind: str, codes: Sequence[str]):
        self.kind = kind
        self.codes = sorted(set(codes))
        super().__init__(f"unknown {kind} code(s): {', '.join(self.codes)}")


class MissingVariableError(PanelDataError):
    def __init__(self, variable: str, where: str = "panel"):
        self.variable = variable
        super().__init__(f"variable '{variable}' is not available in the {where}")


class EmptySampleError(PanelDataError):
    def __init__(self, message: str, n_rows: int = 0):
        self.n_rows = n_rows
        super().__init__(message)


class DegreeSequenceError(CospecError):
    """Degree sequences that no bipartite network can have on average."""

    exit_code = 2


class EnumerationLimitError(CospecError):
    exit_code = 1


class NumericalError(CospecError):
    exit_code = 3


class ConvergenceError(NumericalError):
    def __init__(self, residual: float, iterations: int, year: Optional[int] = None):
        self.residual = residual
        self.iterations = iterations
        self.year = year
        label = f" for {year}" if year is not None else ""
        super().__init__(
            f"solver did not converge{label} after {iterations} iterations "
            f"(max degree residual {residual:.3e})"
        )


class RankDeficiencyError(NumericalError):
    def __init__(self, columns: List[str]):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear column(s): {', '.join(self.columns)}")
