"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Tensor extents incompatible with the requested operation."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration value."""


class ContractError(ValueError):
    """A call violated an operation precondition."""


class GridError(DimensionError):
    """Token count does not match the configured spatial grid."""


class FormatError(ValueError):
    """Malformed binary file (bad magic, version, or structure)."""


class LengthError(FormatError):
    """Binary payload shorter than the header promises."""


class ValidationError(ValueError):
    """Well-formed file whose contents violate dataset invariants."""


class CompatibilityError(ValueError):
    """Checkpoint does not match the target model's parameter tree."""


class DegenerateMapError(ValueError):
    """Operation on an all-zero contribution map."""
