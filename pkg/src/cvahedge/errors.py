"""Error types shared across the package.

All derive from ValueError so callers that only care about "bad input"
can catch the builtin.
"""


class InconsistentInputError(ValueError):
    """Inputs that contradict each other (e.g. forced defaults with zero hazard)."""


class WrongPricerError(ValueError):
    """A pricer was called outside its domain of validity."""


class ExtrapolationError(ValueError):
    """A query point fell outside a precomputed grid."""


class DegenerateHedgeError(ValueError):
    """A hedge-notional conversion divided by a vanishing sensitivity."""


class SingularHedgeError(ValueError):
    """The instrument set cannot span the requested hedge targets."""


class StateError(RuntimeError):
    """An operation was applied to an episode in the wrong lifecycle state."""
