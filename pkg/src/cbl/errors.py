"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ParameterError(ValueError):
    """Constructor parameters describe an invalid object."""


class ConfigError(ValueError):
    """A run or experiment configuration cannot be honoured."""


class CycleError(ValueError):
    """A graph that must be acyclic contains a cycle."""

    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"graph is cyclic: edge {edge[0]} -> {edge[1]} closes a cycle")
