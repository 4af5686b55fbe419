"""Exception hierarchy shared by every module."""


class FairDivError(Exception):
    """Base class for all library errors."""


class InputError(FairDivError):
    """Malformed instance document or argument."""


class SpecError(InputError):
    """Generator spec that cannot be satisfied."""


class CapacityError(FairDivError):
    """Problem size exceeds an exhaustive-search guard."""


class SolverError(FairDivError):
    """Numerical trouble inside the LP solver."""


class DegenerateError(FairDivError):
    """Input admits no meaningful normalization or reweighting."""


class DomainError(FairDivError):
    """Argument outside the domain of a formula."""


class RootError(FairDivError):
    """Bracket without a sign change."""


class ValidationError(FairDivError):
    """Allocation that violates disjointness or item bounds."""


class ClassificationError(FairDivError):
    """Bipartite case construction could not certify a case."""


class ExhaustedError(FairDivError):
    """An allocator ran out of acceptable bundles.

    Carries the round number and any diagnostic payload collected so far.
    """

    def __init__(self, message, round_index=None, diagnostics=None):
        super().__init__(message)
        self.round_index = round_index
        self.diagnostics = diagnostics or {}
