"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class LagError(Exception):
    """Base class for every error raised by the engine."""


class ConfigError(LagError):
    pass


class TransportError(LagError):
    """A provider could not be reached after all retries."""


class MalformedResponseError(LagError):
    """A provider answered, but not in the shape the caller expected."""


class UnknownFixtureError(LagError):
    pass


class DuplicateFixtureError(LagError):
    pass


class DimensionMismatchError(LagError):
    pass


class ZeroVectorError(LagError):
    pass


class EmptyCorpusError(LagError):
    pass


class CorpusParseError(LagError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path} line {line}: {message}")
        self.path = path
        self.line = line


class StructuralError(LagError):
    """Sub-question structure is broken (e.g. a dangling placeholder)."""


class CycleError(StructuralError):
    def __init__(self, cycle: list[int]):
        super().__init__("dependency cycle: " + " -> ".join(f"#{n}" for n in cycle))
        self.cycle = cycle


class DecompositionError(LagError):
    pass


class SynthesisError(LagError):
    pass


class ChainContractError(LagError):
    """The reasoner was asked to resolve a step whose dependencies are unresolved."""
