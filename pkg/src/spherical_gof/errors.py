"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain of a geometric operation."""


class ConfigError(ValueError):
    """A dataset, config file or job request is unusable."""
