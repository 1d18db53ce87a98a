"""Exception hierarchy.

Every failure the library raises on purpose derives from ``AfmodError`` and
carries a stable machine-readable ``code`` (the class name) so the CLI can
report it without parsing messages.
"""


class AfmodError(Exception):
    exit_code = 1

    @property
    def code(self):
        return type(self).__name__


# mobius
class InvalidGroupElement(AfmodError):
    pass


class DegenerateAction(AfmodError):
    pass


class ModelMismatch(AfmodError):
    pass


# fiber
class OutsideHalfPlane(AfmodError):
    pass


class NotATangentVector(AfmodError):
    pass


class NearBoundary(AfmodError):
    pass


class OutsideDiscBundle(AfmodError):
    pass


# surface
class GroupConstructionError(AfmodError):
    pass


class EnumerationOverflow(AfmodError):
    pass


class TruncationInsufficient(AfmodError):
    pass


class MeshIdentificationError(AfmodError):
    pass


class MeshQualityError(AfmodError):
    pass


# germ
class InvalidState(AfmodError):
    pass


class LeavesAlmostFuchsianRegime(AfmodError):
    """|t sigma|_{g_t} reached 1; an expected outcome for large sigma."""

    exit_code = 2

    def __init__(self, message, last_good_t=None, trace=None):
        super().__init__(message)
        self.last_good_t = last_good_t
        self.trace = trace


class NewtonDivergence(AfmodError):
    pass


class ContinuationStall(AfmodError):
    exit_code = 2

    def __init__(self, message, last_good_t=None, trace=None):
        super().__init__(message)
        self.last_good_t = last_good_t
        self.trace = trace


class NormalizationError(AfmodError):
    pass


# af3d
class DegeneratePlane(AfmodError):
    pass


# higgs
class GaussResidualTooLarge(AfmodError):
    pass


class PathLiftError(AfmodError):
    pass


class HolonomyInconsistent(AfmodError):
    pass


class DevelopingMapError(AfmodError):
    pass


# cli
class ArtifactNotFound(AfmodError):
    exit_code = 3


class ConfigError(AfmodError):
    exit_code = 3
