"""Exception types shared across the package."""


class CausalSdrError(Exception):
    """Base class for all package-specific errors."""


class EmptySampleSet(CausalSdrError):
    """Kernel regression was called with no samples."""


class AllWeightsZero(CausalSdrError):
    """Every kernel weight vanished at a query (bandwidth too small there)."""


class SingularDesign(CausalSdrError):
    """Regression design matrix is rank deficient (collinear covariates)."""


class DegenerateCovariance(CausalSdrError):
    """A fitted covariance matrix is not positive definite."""


class SingularSystem(CausalSdrError):
    """Linear estimating system is singular (instrument residuals collinear)."""


class RankDeficient(CausalSdrError):
    """A basis matrix does not have full column rank."""


class NonFiniteEntry(CausalSdrError):
    """A numerical evaluation produced NaN or infinity."""
