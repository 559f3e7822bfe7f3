"""Exception hierarchy shared across the package."""


class POSLError(Exception):
    """Base class for all package errors."""


class ValidationError(POSLError, ValueError):
    """Malformed input data or configuration."""


class InsufficientHistory(POSLError):
    """Not enough past observations to build a summary or fit."""


class NotYetEnrolled(POSLError):
    """Chronological time precedes the subject's entry time."""


class SpecDoesNotFit(POSLError):
    """No cross-validation fold fits in the available data."""


class TooFewSubjects(POSLError):
    """Fewer subjects than sample folds."""


class SingularDesign(POSLError):
    """Collinear design matrix for an unpenalized least-squares fit."""


class MixedSubjects(POSLError):
    """Individual-scope learner handed rows from several subjects."""


class StaleBatch(POSLError):
    """Batch does not advance past what was already absorbed."""


class DimensionMismatch(POSLError, ValueError):
    """Feature or prediction dimensions disagree with the fitted state."""


class StaleUpdate(POSLError):
    """Risk table update at a time earlier than the last update."""


class NoMass(POSLError):
    """Cumulative weight is zero where a mean risk is requested."""


class DegenerateDesign(POSLError):
    """Meta-learning design has no positive-weight rows."""


class NonFinite(POSLError, FloatingPointError):
    """Objective evaluated to a non-finite value."""


class MissingTruth(POSLError):
    """Oracle evaluation requested without the true conditional means."""


class NonStationarySpec(ValidationError):
    """AR polynomial has a root on or inside the unit circle."""


class InvalidMixture(ValidationError):
    """Mixture probabilities are not a valid distribution."""
