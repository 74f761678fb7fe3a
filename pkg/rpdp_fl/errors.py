"""Exceptions raised by rpdp_fl, each carrying the exit status the CLI uses."""


class RpdpError(Exception):
    """Base class for every error rpdp_fl raises on purpose."""

    exit_code = 1


class ConfigError(RpdpError):
    """The experiment configuration or a parameter is invalid."""

    exit_code = 2


class PrivacyDomainError(ConfigError, ValueError):
    """An accounting function was called outside its mathematical domain."""


class FitError(RpdpError):
    """The sampling-probability estimator could not be fitted."""

    exit_code = 3


class OracleError(RpdpError):
    """Numerical integration did not converge to the requested tolerance."""

    exit_code = 3


class DataError(RpdpError):
    """Input data is missing, malformed or inconsistent."""

    exit_code = 4


class InvariantError(RpdpError):
    """A budget or consistency invariant would be broken."""

    exit_code = 5
