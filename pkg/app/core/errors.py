class MixtureError(Exception):
    """Base class for errors that map to a command-line exit code"""

    exit_code: int = 1
    default_detail: str = "Mixture estimation failed"

    def __init__(self, detail: str | None = None):
        self.detail = detail or self.default_detail
        super().__init__(self.detail)


class InvalidArgumentError(MixtureError, ValueError):
    """Exception raised when an argument violates an operation's precondition"""

    exit_code = 2
    default_detail = "Invalid argument"


class NonConvergenceError(MixtureError):
    """Exception raised when a fit that must converge did not"""

    exit_code = 3
    default_detail = "EM did not converge within the iteration limit"


class CalibrationFailedError(MixtureError):
    """Exception raised when the c0 bisection bracket has no sign change"""

    exit_code = 3
    default_detail = "Calibration bracket does not contain a root"


class HypothesisViolatedError(MixtureError):
    """Exception raised when a certificate is requested outside its hypothesis"""

    exit_code = 4
    default_detail = "Certificate hypothesis violated"


class DegenerateComponentError(MixtureError):
    """Signal that a component received no responsibility mass"""

    default_detail = "Component has zero total weight"


class InternalError(MixtureError):
    """Exception raised when a data point has zero total mixture density"""

    default_detail = "Zero mixture density at a data point"
