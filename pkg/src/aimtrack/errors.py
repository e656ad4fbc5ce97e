"""Exception types shared across the pipeline stages."""


class NoSignalError(RuntimeError):
    """No usable signal in the analysis window (drone absent or silent channel)."""


class InfeasibleTiltError(RuntimeError):
    """Thrust-balance equation has no tilt solution (thrust below weight)."""


class NotReadyError(RuntimeError):
    """Not enough data to initialize (e.g. too few position fixes)."""


class StaleSyncError(RuntimeError):
    """Beacon not detected; clock offsets carried over with decayed confidence."""


class NoMeasurementError(RuntimeError):
    """All element-pair delays were rejected; no TDoA for this pair."""


class SolveFailedError(RuntimeError):
    """Multilateration did not converge or the geometry is degenerate."""
