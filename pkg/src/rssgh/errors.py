"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class GraphError(ValueError):
    """Invalid region adjacency structure."""


class ModelSpecError(ValueError):
    """A model specification violates the sub-model constraints."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where a finite one is required.

    ``index`` is the offending record index when one can be identified.
    """

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (record {index})")
        self.index = index


class LifeTableLookupError(KeyError):
    """A population-hazard stratum is missing from the life table."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing life-table stratum"


class ConfigError(ValueError):
    """Invalid run configuration."""


class SamplerError(RuntimeError):
    """The sampler could not proceed (e.g. persistent divergences)."""

    def __init__(self, message, chain=None, diagnostics=None):
        super().__init__(message if chain is None else f"chain {chain}: {message}")
        self.chain = chain
        self.diagnostics = diagnostics or {}
