"""Exception types shared across the pipeline."""


class SwsplatError(Exception):
    """Base class for all package errors."""


class ConfigError(SwsplatError):
    """Invalid or missing configuration. CLI exit code 2."""


class DataError(SwsplatError):
    """Dataset, flow or checkpoint files missing or malformed. CLI exit code 3."""


class NumericError(SwsplatError):
    """NaN/Inf guard tripped during optimization. CLI exit code 4."""


class BehindCamera(SwsplatError):
    """Gaussian mean is at or behind the near plane for this view."""


class ShapeMismatch(SwsplatError):
    """Array shapes disagree with the operation's contract."""


class MissingFlow(DataError):
    def __init__(self, view_id: str, frame: int):
        super().__init__(f"missing flow for view {view_id!r}, transition {frame}->{frame + 1}")
        self.view_id = view_id
        self.frame = frame


class MissingImage(DataError):
    def __init__(self, view_id: str, frame: int):
        super().__init__(f"missing image for view {view_id!r}, frame {frame}")
        self.view_id = view_id
        self.frame = frame


class EmptyWindow(SwsplatError):
    """Window has fewer than the required number of frames."""


class EmptySeedCloud(SwsplatError):
    """Seed point cloud contains no points."""


class OverlapMismatch(SwsplatError):
    """Adjacent window models do not share exactly one frame."""


class NearPiRotation(SwsplatError):
    """Rotation angle too close to pi for a stable matrix logarithm."""
