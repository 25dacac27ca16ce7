"""Exception hierarchy.

Exit-code mapping used by the CLI: validation problems exit 2, numerical
failures exit 3, I/O problems exit 4.
"""


class LoggasError(Exception):
    exit_code = 1


class ValidationError(LoggasError):
    """Bad input: unparseable specs, violated preconditions, degenerate configs."""

    exit_code = 2

    def __init__(self, message, code="invalid"):
        super().__init__(message)
        self.code = code


class RejectedInput(ValidationError):
    pass


class FreenessViolated(ValidationError):
    def __init__(self, message="freeness violated"):
        super().__init__(message, code="freeness-violated")


class NumericalError(LoggasError):
    exit_code = 3


class SupportNotNormalized(NumericalError):
    def __init__(self, mass_defect):
        super().__init__(
            f"support not normalized (mass defect {mass_defect:.3e}); "
            "run normalize_support first"
        )
        self.mass_defect = mass_defect


class CriticalPotential(NumericalError):
    def __init__(self, min_s):
        super().__init__(f"critical or multi-cut potential (min S = {min_s:.3e})")
        self.min_s = min_s


class NearCriticalEdge(NumericalError):
    def __init__(self, value):
        super().__init__(f"near-critical edge, shrink delta (|m_V - V'| = {value:.3e})")
        self.value = value


class NoNormalizationFound(NumericalError):
    def __init__(self):
        super().__init__("no one-cut normalization found")


class OutlierConfiguration(NumericalError):
    def __init__(self, max_abs):
        super().__init__(f"outlier configuration (max |lambda| = {max_abs:.6f})")
        self.max_abs = max_abs


class CollisionError(NumericalError):
    def __init__(self, message="coincident coordinates"):
        super().__init__(message)
