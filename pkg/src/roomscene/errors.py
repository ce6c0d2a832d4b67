"""Exception hierarchy shared across the engine."""


class RoomSceneError(Exception):
    """Base class for every error raised by the engine."""


class DegenerateInput(RoomSceneError):
    pass


class BehindCamera(RoomSceneError):
    pass


class DimensionMismatch(RoomSceneError):
    pass


class DegenerateCluster(RoomSceneError):
    pass


class NoFocalSolution(RoomSceneError):
    pass


class CalibrationFailed(RoomSceneError):
    pass


class NoProposal(RoomSceneError):
    pass


class UnderConstrained(RoomSceneError):
    pass


class OutOfRange(RoomSceneError):
    pass


class EmptyMask(RoomSceneError):
    pass


class SingularConfiguration(RoomSceneError):
    pass


class CyclicGraph(RoomSceneError):
    pass


class ZeroNorm(RoomSceneError):
    pass


class EmptyLibrary(RoomSceneError):
    pass


class RayParallelToPlane(RoomSceneError):
    pass


class InfeasibleStart(RoomSceneError):
    pass


class PlacementRejection(RoomSceneError):
    pass


class IdMismatch(RoomSceneError):
    pass


class BundleError(RoomSceneError):
    """Bundle loading problem; ``path`` names the offending file or field."""

    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class MissingFile(BundleError):
    pass


class SchemaViolation(BundleError):
    pass


class InvariantViolation(BundleError):
    pass


class StageError(RoomSceneError):
    """Wraps the first fatal error of a pipeline stage, tagged with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
