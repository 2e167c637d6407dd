class DomainError(ValueError):
    """A request lies outside the region where a quantity is defined."""


class ChainValidationError(ValueError):
    """A transition chain breaks stochasticity or level monotonicity."""


class OracleRefused(ValueError):
    """The brute-force oracle was asked for an instance it will not enumerate."""
