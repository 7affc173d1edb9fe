"""Exception and warning types raised across gmclab."""


class GMCLabError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 2


class ConfigError(GMCLabError):
    exit_code = 1

    def __init__(self, message: str, lineno: int | None = None, path: str | None = None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        elif lineno is not None:
            where = f"line {lineno}: "
        super().__init__(where + message)


class DivergentIntegral(GMCLabError):
    pass


class QuadratureBudgetExceeded(GMCLabError):
    pass


class NotPSD(GMCLabError):
    pass


class EigensolverFailure(GMCLabError):
    pass


class BudgetUnreachable(GMCLabError):
    pass


class NotACoupling(GMCLabError):
    pass


class ResidualNotPSD(GMCLabError):
    pass


class WindowNotInterior(GMCLabError):
    pass


class NonPositiveTransform(GMCLabError):
    pass


class UnderResolved(GMCLabError):
    pass


class EpsilonUnderResolved(GMCLabError):
    pass


class MissingFourierData(GMCLabError):
    pass


class NoValidRadius(GMCLabError):
    def __init__(self, message: str, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(message)


class RateNotNegative(GMCLabError):
    def __init__(self, beta: complex, p: float, c_beta: float):
        self.beta, self.p, self.c_beta = beta, p, c_beta
        super().__init__(f"no negative decay rate: beta={beta}, p={p}, c_beta={c_beta:.6g}")


class SinglePoint(GMCLabError):
    pass


class NotCertified(GMCLabError):
    def __init__(self, message: str, eigenvalue: float):
        self.eigenvalue = eigenvalue
        super().__init__(message)


class PreconditionViolationWarning(UserWarning):
    pass


class ClippedEigenvalueWarning(UserWarning):
    pass
