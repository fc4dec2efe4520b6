"""Exception types shared across the package."""


class CP1TorusError(Exception):
    """Base class for all computational failures in this package."""


class PoleProximity(CP1TorusError):
    """Requested evaluation point is inside the guard radius of a lattice point."""


class StepFailure(CP1TorusError):
    """Adaptive integrator hit the step floor before meeting the tolerance."""


class CommutatorDrift(CP1TorusError):
    """|tr[A,B] + 2| exceeds tolerance; upstream integration is suspect."""


class CalibrationFailure(CP1TorusError):
    """Calibration of the affine origin did not converge."""


class ContinuationStall(CP1TorusError):
    """Predictor-corrector continuation reached its step floor."""


class BranchLoss(CP1TorusError):
    """Corrector jumped to a different solution branch during continuation."""


class DegenerateAxis(CP1TorusError):
    """Curve holonomy is not hyperbolic; no axis to measure twisting against."""


class NewtonDivergence(CP1TorusError):
    """Newton refinement diverged or stalled."""


class ZeroDifferential(CP1TorusError):
    """Operation undefined for the zero quadratic differential."""


class GridMismatch(CP1TorusError):
    """Grid geometries of the operands differ."""


class DegenerateDerivative(CP1TorusError):
    """|f'| vanishes on the grid; Schwarzian derivative undefined there."""


class UsageError(CP1TorusError):
    """Invalid command-line arguments (exit code 2)."""
