"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit a
single structured error record per failure.
"""


class TbmError(Exception):
    code = "error"


class ExprSyntaxError(TbmError, SyntaxError):
    code = "syntax_error"

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownSymbol(TbmError):
    code = "unknown_symbol"


class DomainError(TbmError, ArithmeticError):
    code = "domain_error"


class SignatureError(TbmError):
    code = "signature_error"


class SingularMetric(TbmError):
    code = "singular_metric"


class InvalidDimensionParam(TbmError):
    code = "invalid_dimension_param"


class LeftChart(TbmError):
    code = "left_chart"


class StepFailure(TbmError):
    code = "step_failure"


class NoConvergence(TbmError):
    code = "no_convergence"


class AmbiguousGeodesic(TbmError):
    code = "ambiguous_geodesic"


class EigenFailure(TbmError):
    code = "eigen_failure"


class SingularM(TbmError):
    code = "singular_m"

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ConjugatePoints(TbmError):
    code = "conjugate_points"


class GridTooCoarse(TbmError):
    code = "grid_too_coarse"


class PreconditionFailed(TbmError):
    code = "precondition_failed"


class EmptyRegion(TbmError):
    code = "empty_region"


class NonTimelikePair(TbmError):
    code = "non_timelike_pair"


class InvariantFailure(TbmError):
    code = "invariant_failure"


class ContainmentFailure(TbmError):
    code = "containment_failure"

    def __init__(self, message, offenders=None, fitted_c=None):
        super().__init__(message)
        self.offenders = offenders
        self.fitted_c = fitted_c


class DualizabilityUnverified(TbmError):
    code = "dualizability_unverified"


class TooManyAtoms(TbmError):
    code = "too_many_atoms"


class ConfigError(TbmError):
    code = "config_error"

    def __init__(self, key, reason):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason
