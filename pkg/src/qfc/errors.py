"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit 1,
numerical failures exit 2, acceptance-check failures exit 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, schema violation, or fingerprint mismatch."""


class NumericalError(RuntimeError):
    """Integration or discretization failure (positivity loss, CFL, NaN)."""


class AcceptanceFailure(RuntimeError):
    """A verification check did not meet its stated tolerance."""
