class EstimatorUndefinedError(ValueError):
    """An estimator was asked for on data that cannot define it (zero
    denominators, out-of-model inputs, degenerate samples)."""


class CutoffTooSmallError(ValueError):
    """Photon-number truncation drops more probability mass than allowed."""


class ConvergenceError(RuntimeError):
    pass


class InconsistentCalibrationWarning(UserWarning):
    """An efficiency-like estimate came out above 1."""
