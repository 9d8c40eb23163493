"""Exception hierarchy for the yamabe package."""


class YamabeError(Exception):
    """Base class for all errors raised by this package."""


# --- expression core ------------------------------------------------------

class DomainError(YamabeError):
    """Numeric evaluation left the domain (sqrt of a negative, log of a
    non-positive value, division by zero, fractional power of a negative)."""


class UnboundVariableError(YamabeError):
    """A free variable of the expression has no value in the binding."""


class ExpressionBudgetError(YamabeError):
    """The global expression-node ceiling was hit; the computation is
    aborted instead of thrashing."""


# --- parsing and validation ----------------------------------------------

class ParseError(YamabeError):
    """Syntax error with a byte offset and the set of tokens that would
    have been accepted at that position."""

    def __init__(self, message, offset, expected=()):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset
        self.expected = frozenset(expected)


class UnknownFunctionError(ParseError):
    """An identifier was called like a function but is not one we know."""


class ValidationError(YamabeError):
    """A problem file parsed but violates a semantic invariant."""


# --- tensor algebra and geometry ------------------------------------------

class SlotError(YamabeError):
    """Incompatible tensor slots (variance or frame mismatch)."""


class FrameError(YamabeError):
    """Operation applied to a tensor in the wrong frame."""


class DimensionError(YamabeError):
    """Operation undefined in this dimension."""


class SingularMetricError(YamabeError):
    """Metric determinant vanishes at a required sample point."""


# --- hypersurface machinery -----------------------------------------------

class NullConormalError(YamabeError):
    """g(grad s, grad s) <= 0 at a required point: the conormal is null or
    timelike there, which the hypersurface formulas do not cover."""


class TangencyError(YamabeError):
    """Embedding Jacobian is not tangent to the level set."""


class TraceError(YamabeError):
    """A tensor that must be trace-free is not."""


class PreconditionError(YamabeError):
    """A numerically checked operator precondition failed."""


class NotFlatError(YamabeError):
    """Ambient curvature does not vanish where a flat-space formula was
    requested."""


# --- defining-density expansion -------------------------------------------

class OrderStallError(YamabeError):
    """An improvement sweep failed to raise the vanishing order."""


class OrderViolationError(YamabeError):
    """The measured vanishing order fell short of the guaranteed one."""


class ObstructionOrderError(YamabeError):
    """An improvement step at the obstructed order was requested."""


class SignalBelowNoiseError(YamabeError):
    """Residual magnitude is under the absolute noise floor everywhere."""


class ExtrapolationUnstableError(YamabeError):
    """Richardson extrapolants failed to settle."""


# --- integration and variation --------------------------------------------

class BoxTooSmallError(YamabeError):
    """Mollifier mass leaks outside the level-set integration box."""


class NewtonFailError(YamabeError):
    """Surface tracking Newton iteration did not converge."""
