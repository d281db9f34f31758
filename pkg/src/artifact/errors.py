"""Exception types raised across the package."""


class ArtifactError(Exception):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConstraintError(ArtifactError):
    """A point violates a factor constraint."""


class ShapeError(ArtifactError):
    """Dimensions of inputs do not fit."""


class UnsupportedError(ArtifactError):
    """A construction outside the supported classes was requested."""


class UnsupportedSubmanifoldError(UnsupportedError):
    pass


class RankError(ArtifactError):
    pass


class TamenessError(ArtifactError):
    pass


class ComposabilityError(ArtifactError):
    pass


class SamplingError(ArtifactError):
    pass


class ActionError(ArtifactError):
    pass


class CapabilityError(ArtifactError):
    pass


class DegeneracyError(ArtifactError):
    pass


class PairingError(ArtifactError):
    pass


class GluingError(ArtifactError):
    pass


class GluingHypothesisError(GluingError):
    pass


class SectionError(ArtifactError):
    pass


class TruncationError(ArtifactError):
    pass
