"""Exception types shared across the package."""


class ContactSteerError(Exception):
    """Base class for all package errors."""


class DegenerateForm(ContactSteerError):
    """The defining one-form vanishes (or nearly vanishes) at a point."""


class UnboundedForm(ContactSteerError):
    """The one-form norm keeps growing under grid refinement."""


class Step2Violation(ContactSteerError):
    """The wedge certificate failed: the distribution is not step two."""


class RankDeficiency(ContactSteerError):
    """Spanning sections do not span the kernel distribution at a point."""


class NotHorizontal(ContactSteerError):
    """A vector or curve is not compatible with the inclusion at a point."""


class AdmissibilityViolation(ContactSteerError):
    """Control data violates the admissible-class invariants."""


class OutOfDomain(ContactSteerError):
    """Time argument outside the unit interval."""


class BoundMismatch(ContactSteerError):
    """Controls with different frame bounds cannot be combined."""


class NonMonotone(ContactSteerError):
    """A time change must be nondecreasing."""


class BlowUp(ContactSteerError):
    """Trajectory state exceeded the configured norm bound."""


class AccuracyLoss(ContactSteerError):
    """Step-halving error estimate exceeded the requested tolerance."""


class PatchEscape(ContactSteerError):
    """An intermediate point left the frame patch."""


class NoConvergence(ContactSteerError):
    """Root finding did not reach the requested residual."""


class OutsideLocality(ContactSteerError):
    """Target beyond the calibrated locality radius."""


class BudgetExceeded(ContactSteerError):
    """Recursive planning exceeded its bisection budget."""


class LiftFailure(ContactSteerError):
    """Grid homotopy lift failed at one or more nodes."""


class ControlFormatError(ContactSteerError):
    """Malformed control, loop, or scenario file."""
