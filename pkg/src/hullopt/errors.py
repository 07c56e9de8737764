"""Exception types shared across modules."""


class ConfigurationError(ValueError):
    """Inconsistent lattice, parameter map or run configuration."""


class BindingError(ValueError):
    """A field or model is bound to a different mesh topology."""


class SolverError(RuntimeError):
    """Numerical factorization failed (singular or ill-conditioned system)."""


class ObjectiveError(ValueError):
    """Objective functional undefined for the given hull."""


class EnrichmentError(ValueError):
    """Snapshot database update rejected."""
