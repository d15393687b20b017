"""Exception hierarchy shared by all modules."""


class MTLiverError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MTLiverError):
    """Array extents are incompatible with the requested operation."""


class ConfigError(MTLiverError):
    """A configuration value violates a documented constraint."""


class ContractError(MTLiverError):
    """A caller violated an API precondition."""


class FormatError(MTLiverError):
    """An on-disk artifact is malformed."""


class NumericalError(MTLiverError):
    """A non-finite value appeared where the computation requires finiteness."""


class CompatibilityError(MTLiverError):
    """A checkpoint does not match the model it is being loaded into."""
