from typing import Optional


class CycloprefError(Exception):
    """Root of every error raised by cyclopref."""


class UsageError(CycloprefError):
    """Bad invocation: unknown flag values, missing inputs, impossible parameters."""


class DataError(CycloprefError, ValueError):
    """Input data that cannot be processed."""


class NetworkFormatError(DataError):
    def __init__(self, message: str, edge_id: Optional[str] = None):
        self.edge_id = edge_id
        if edge_id is not None:
            message = f"edge {edge_id}: {message}"
        super().__init__(message)


class TrajectoryFormatError(DataError):
    def __init__(self, message: str, source: Optional[str] = None, row: Optional[int] = None):
        self.source = source
        self.row = row
        where = source or "<input>"
        if row is not None:
            where = f"{where}, row {row}"
        super().__init__(f"{where}: {message}")


class UnmatchableTrajectoryError(DataError):
    def __init__(self, trajectory_id: str, reason: str, point_index: Optional[int] = None):
        self.trajectory_id = trajectory_id
        self.point_index = point_index
        self.reason = reason
        detail = f" (point {point_index})" if point_index is not None else ""
        super().__init__(f"trajectory {trajectory_id} is unmatchable: {reason}{detail}")


class NonContiguousPathError(DataError):
    pass


class UnreachableError(DataError):
    pass


class UnsnappableError(DataError):
    pass


class ClusteringError(DataError):
    pass


class PreferenceError(DataError):
    pass
