"""Nuisance models feeding the estimating equations.

Five user-specifiable pieces live here: the treatment assignment density
p(A|C) (linear-Gaussian, fit once by maximum likelihood), the reference
treatment density g*(A) used for reweighting, the instrument functions
alpha(A) and d(A,C), and the parametric model ftilde for the part of the
outcome mean that the projected treatment does not explain.  The module
also provides the Monte Carlo expectation over g* draws that the augmented
moment needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateCovariance, SingularDesign, SingularSystem
from .kernel_smoothing import KernelConfig, SmootherDiagnostics, nw_regress
from .rng import RngStream

_LOG_2PI = np.log(2.0 * np.pi)


def _basis_matrix(beta) -> np.ndarray:
    """Accept either a Basis object or a raw p x d array."""
    return np.asarray(getattr(beta, "matrix", beta), dtype=np.float64)


def _mvn_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Log density of rows of x under N(mean, chol @ chol.T)."""
    x = np.atleast_2d(x)
    diff = x - mean
    sol = solve_triangular(chol, diff.T, lower=True)
    quad = np.einsum("ij,ij->j", sol, sol)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (x.shape[1] * _LOG_2PI + logdet + quad)


def _safe_cholesky(cov: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovariance(f"{what} covariance is not positive definite") from exc


# ---------------------------------------------------------------------------
# treatment assignment model


@dataclass(frozen=True)
class TreatmentModel:
    """Linear-Gaussian conditional treatment model A | C ~ N(B [1, C], Sigma).

    ``coef`` has shape (1 + dim_C, p) so that the conditional mean is
    ``[1, c] @ coef``.  ``ridged`` records that the MLE residual covariance
    was not positive definite and a ridge was added.
    """

    coef: np.ndarray
    covariance: np.ndarray
    family: str = "linear-gaussian"
    ridged: bool = False
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_chol", _safe_cholesky(self.covariance, "treatment model"))

    @property
    def p(self) -> int:
        return self.covariance.shape[0]

    def conditional_mean(self, c: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(c)
        design = np.column_stack([np.ones(c.shape[0]), c])
        return design @ self.coef

    def log_density(self, a: np.ndarray, c: np.ndarray) -> np.ndarray:
        return _mvn_logpdf(np.atleast_2d(a), self.conditional_mean(c), self._chol)


def fit_treatment_model(data) -> TreatmentModel:
    """Maximum-likelihood fit of the linear-Gaussian treatment model.

    Fit once per dataset; the estimating-equation solvers never update it.
    Raises :class:`SingularDesign` for collinear covariates.  A residual
    covariance that is not positive definite (e.g. noiseless fixtures or
    n too small) gets the documented ridge and sets ``ridged``.
    """
    a, c = data.a, data.c
    n = a.shape[0]
    design = np.column_stack([np.ones(n), c])
    if n <= design.shape[1]:
        raise SingularDesign(f"need n > {design.shape[1]} rows, got {n}")
    coef, _, rank, _ = np.linalg.lstsq(design, a, rcond=None)
    if rank < design.shape[1]:
        raise SingularDesign("covariate design matrix is rank deficient")
    resid = a - design @ coef
    sigma = resid.T @ resid / n
    ridged = False
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        ridged = True
        ridge = 1e-6 * np.trace(sigma) / sigma.shape[0]
        if ridge <= 0.0:
            ridge = 1e-12
        for _ in range(60):
            sigma = sigma + ridge * np.eye(sigma.shape[0])
            try:
                np.linalg.cholesky(sigma)
                break
            except np.linalg.LinAlgError:
                ridge *= 10.0
        else:
            raise DegenerateCovariance("residual covariance cannot be ridged to PD")
    return TreatmentModel(coef=coef, covariance=sigma, ridged=ridged)


def treatment_density(model: TreatmentModel, a, c) -> float | np.ndarray:
    """Conditional density value(s) p(a | c) under the fitted model."""
    out = np.exp(model.log_density(a, c))
    return float(out[0]) if np.ndim(a) == 1 else out


# ---------------------------------------------------------------------------
# reference density over treatments


@dataclass(frozen=True)
class ReferenceDensity:
    """A fixed Gaussian reference density over the treatment space."""

    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_chol", _safe_cholesky(self.covariance, "reference"))

    def log_density(self, a: np.ndarray) -> np.ndarray:
        return _mvn_logpdf(np.atleast_2d(a), self.mean, self._chol)

    def density(self, a) -> float | np.ndarray:
        out = np.exp(self.log_density(a))
        return float(out[0]) if np.ndim(a) == 1 else out

    def sample(self, size: int, rng: RngStream) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.covariance, size)


def moment_matched_reference(data) -> ReferenceDensity:
    """Default reference: Gaussian matched to the sample mean/covariance of A.

    Keeps the density ratios near one, which controls the weight variance.
    """
    a = data.a
    cov = np.cov(a, rowvar=False)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + (1e-6 * np.trace(cov) / cov.shape[0] + 1e-12) * np.eye(cov.shape[0])
    return ReferenceDensity(mean=a.mean(axis=0), covariance=cov)


def ipw_weight(model: TreatmentModel, ref: ReferenceDensity, a, c, cap: float | None = None):
    """Pointwise density ratio g*(a) / p(a | c), optionally capped."""
    w = np.exp(ref.log_density(a) - model.log_density(a, c))
    if cap is not None:
        w = np.minimum(w, cap)
    return float(w[0]) if np.ndim(a) == 1 else w


def ipw_weights(
    model: TreatmentModel,
    ref: ReferenceDensity,
    data,
    *,
    cap_quantile: float = 0.99,
    cap: float | None = None,
    normalize: bool = True,
):
    """All in-sample weights with truncation and optional self-normalization.

    When no absolute ``cap`` is given the weights are truncated at their
    in-sample ``cap_quantile`` quantile.  ``normalize`` rescales the capped
    weights to mean one (the usual normalized form); density ratios between
    a fixed reference and a conditional model are heavy tailed, so the raw
    sample mean systematically under-represents the tail mass and the
    normalized form is the stable default.  Returns ``(weights, n_truncated)``.
    """
    raw = np.exp(ref.log_density(data.a) - model.log_density(data.a, data.c))
    if cap is None:
        cap = float(np.quantile(raw, cap_quantile))
    n_truncated = int(np.count_nonzero(raw > cap))
    w = np.minimum(raw, cap)
    if normalize:
        mean = w.mean()
        if mean > 0:
            w = w / mean
    return w, n_truncated


# ---------------------------------------------------------------------------
# parametric outcome-shift model (ftilde)


@dataclass(frozen=True)
class LinearFeatureMap:
    """Features [C, A, A_j * C_j for the first min(p, 4) coordinates].

    No intercept: a constant feature has zero kernel residual and would make
    the fitting system singular.  ``include_interactions=False`` gives the
    deliberately impoverished family used to probe robustness.
    """

    include_interactions: bool = True

    def __call__(self, a, c, beta=None):
        a = np.atleast_2d(a)
        c = np.atleast_2d(c)
        cols = [c, a]
        if self.include_interactions:
            k = min(a.shape[1], 4, c.shape[1])
            cols.append(a[:, :k] * c[:, :k])
        return np.column_stack(cols)


@dataclass(frozen=True)
class ZeroFeatureMap:
    """Empty feature map: the shift model is identically zero."""

    def __call__(self, a, c, beta=None):
        return np.empty((np.atleast_2d(a).shape[0], 0))


def linear_feature_map(include_interactions: bool = True) -> LinearFeatureMap:
    return LinearFeatureMap(include_interactions=include_interactions)


def zero_feature_map() -> ZeroFeatureMap:
    return ZeroFeatureMap()


@dataclass(frozen=True)
class FTildeModel:
    """Linear-in-parameters model for E[Y | A, C] - E[Y | A'beta].

    ``psi=None`` marks an unfitted family; :func:`fit_ftilde` returns a
    fitted copy.  An empty feature map evaluates to zero everywhere.
    """

    feature_map: callable
    psi: np.ndarray | None = None

    def __post_init__(self):
        if self.psi is not None:
            object.__setattr__(self, "psi", np.asarray(self.psi, dtype=np.float64))

    @property
    def fitted(self) -> bool:
        return self.psi is not None

    def evaluate(self, a, c, beta=None) -> np.ndarray:
        phi = self.feature_map(a, c, beta)
        if phi.shape[1] == 0:
            return np.zeros(phi.shape[0])
        if self.psi is None:
            raise ValueError("ftilde model is not fitted")
        if phi.shape[1] != self.psi.shape[0]:
            raise ValueError(f"feature length {phi.shape[1]} != len(psi) {self.psi.shape[0]}")
        return phi @ self.psi

    def evaluate_cross(self, a_draws: np.ndarray, c: np.ndarray, beta=None) -> np.ndarray:
        """Evaluate on the cross product of draw rows and covariate rows.

        Returns a (draws, rows-of-c) matrix; draw rows are chunked to bound
        the transient feature matrix.
        """
        c = np.atleast_2d(c)
        k, n = a_draws.shape[0], c.shape[0]
        chunk = max(1, 2_000_000 // max(n, 1))
        out = np.empty((k, n))
        for lo in range(0, k, chunk):
            hi = min(lo + chunk, k)
            a_rep = np.repeat(a_draws[lo:hi], n, axis=0)
            c_rep = np.tile(c, (hi - lo, 1))
            out[lo:hi] = self.evaluate(a_rep, c_rep, beta).reshape(hi - lo, n)
        return out


# ---------------------------------------------------------------------------
# the bundle of user choices


@dataclass(frozen=True)
class NuisanceSpec:
    """The free modeling choices, with the documented defaults.

    ``alpha=None`` means the identity instrument alpha(A) = A.  ``dfn=None``
    reuses the ftilde feature map as the instrument d(A,C), which makes the
    shift-model fit an exactly determined linear system.
    """

    alpha: callable | None = None
    dfn: callable | None = None
    reference: ReferenceDensity | None = None
    ftilde: FTildeModel = field(default_factory=lambda: FTildeModel(linear_feature_map()))
    mc_draws: int = 200
    weight_cap_quantile: float = 0.99
    weight_cap: float | None = None
    weight_normalize: bool = True
    reweight_smoothers: bool = False
    aug_term2_weighted: bool = True
    aug_term3: str = "reference_draws"

    def __post_init__(self):
        if self.mc_draws < 1:
            raise ValueError("mc_draws must be >= 1")
        if self.aug_term3 not in ("reference_draws", "weighted_empirical"):
            raise ValueError("aug_term3 must be 'reference_draws' or 'weighted_empirical'")

    def alpha_values(self, a: np.ndarray) -> np.ndarray:
        if self.alpha is None:
            return a
        out = np.asarray(self.alpha(a), dtype=np.float64)
        return out[:, None] if out.ndim == 1 else out

    def d_values(self, a: np.ndarray, c: np.ndarray, beta=None) -> np.ndarray:
        if self.dfn is None:
            return self.ftilde.feature_map(a, c, beta)
        out = np.asarray(self.dfn(a, c), dtype=np.float64)
        return out[:, None] if out.ndim == 1 else out

    def resolve_reference(self, data) -> ReferenceDensity:
        return self.reference if self.reference is not None else moment_matched_reference(data)


def fit_ftilde(
    data,
    beta,
    spec: NuisanceSpec,
    kcfg: KernelConfig,
    *,
    sample_weights: np.ndarray | None = None,
    diagnostics: SmootherDiagnostics | None = None,
) -> FTildeModel:
    """Fit the outcome-shift parameters at a fixed reduction basis.

    Both the instrument d(A,C) and the model residual Y - features @ psi are
    centered by leave-one-out kernel regression on the projected treatment;
    with a linear feature map the resulting moment condition is a square
    linear system in psi, solved directly.

    Raises :class:`SingularSystem` when the centered instruments are
    collinear (a degenerate d(A,C) choice).
    """
    b = _basis_matrix(beta)
    phi = spec.ftilde.feature_map(data.a, data.c, b)
    k = phi.shape[1]
    if k == 0:
        return replace(spec.ftilde, psi=np.empty(0))
    dvals = spec.d_values(data.a, data.c, b)
    if dvals.shape[1] != k:
        raise ValueError(f"d(A,C) gives {dvals.shape[1]} instruments for {k} parameters")

    z = data.a @ b
    stacked = np.column_stack([data.y, phi, dvals])
    smoothed = nw_regress(
        z, stacked, z, kcfg,
        leave_one_out=True, sample_weights=sample_weights, diagnostics=diagnostics,
    )
    ry = data.y - smoothed[:, 0]
    rphi = phi - smoothed[:, 1 : 1 + k]
    rd = dvals - smoothed[:, 1 + k :]

    n = data.y.shape[0]
    gram = rd.T @ rphi / n
    target = rd.T @ ry / n
    if np.linalg.cond(gram) > 1e12:
        raise SingularSystem("centered instruments are collinear; change d(A,C)")
    return replace(spec.ftilde, psi=np.linalg.solve(gram, target))


# ---------------------------------------------------------------------------
# Monte Carlo expectation under the reference density


def q_expectation_given_c(integrand, c, ref: ReferenceDensity, mc_draws: int, rng: RngStream):
    """Average of ``integrand`` over treatment draws from the reference density.

    ``integrand(draws, c)`` is called once with the full ``(mc_draws, p)``
    draw block and must return an array whose leading axis indexes draws;
    the average is taken over that axis.  Deterministic given ``rng``.
    """
    if mc_draws < 1:
        raise ValueError("mc_draws must be >= 1")
    draws = ref.sample(mc_draws, rng)
    values = np.asarray(integrand(draws, c), dtype=np.float64)
    if values.shape[0] != mc_draws:
        raise ValueError("integrand must return one leading entry per draw")
    return values.mean(axis=0)
