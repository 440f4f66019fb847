"""Exception hierarchy shared across the toolkit."""


class MMTraceError(Exception):
    """Base class for all domain errors raised by this package."""


class ValidationError(MMTraceError):
    """Input data violates a structural contract (bad shapes, counts, indices)."""


class TraceValidationError(ValidationError):
    """An attention trace violates one or more of its invariants.

    Carries the full violation list so callers can report every problem at once.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid trace: {lines}")


class FormatError(MMTraceError):
    """A byte stream is not a well-formed MMTR file."""


class DegenerateMassError(MMTraceError):
    """A metric would divide by a zero attention mass or token count."""


class BudgetError(MMTraceError):
    """A pruning budget admits no retained tokens."""


class InfeasibleTiesError(BudgetError):
    """Tied scores saturate the budget: no observed threshold satisfies it."""


class NumericError(MMTraceError):
    """A forward pass produced non-finite values."""
