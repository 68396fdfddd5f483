"""Exception types raised across the package."""


class PredguideError(Exception):
    pass


class UnresolvedObjectRef(PredguideError):
    """A constraint names an object id that no declaration provides."""


class MalformedBucket(PredguideError):
    """Parser output is missing a bucket or a required record field."""


class InvalidReviewedProgram(PredguideError):
    pass


class DegenerateMask(PredguideError):
    """A mask with zero area was passed where a footprint is required."""


class BackendFailure(PredguideError):
    pass


class SchemaViolation(PredguideError):
    pass


class MalformedInput(PredguideError):
    pass


class InfeasibleProgram(PredguideError):
    pass


class UnparseableInstruction(PredguideError):
    pass


class EmptyHistory(PredguideError):
    pass
