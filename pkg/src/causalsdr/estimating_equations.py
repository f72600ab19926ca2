"""The three moment functions solved for the reduction basis.

A basis is only identified up to its column space, so every moment function
works in a pinned parameterization: the top d x d block of the basis is the
identity and the free parameters are the remaining (p - d) x d entries.

Each sample contributes the outcome residual times the instrument residual,
both centered by leave-one-out kernel regression on the projected treatment.
The instrument residual (a p-vector for the default identity instrument) is
crossed with the d projection coordinates, giving p*d raw rows per sample;
the rows belonging to the pinned block are dropped, which leaves exactly one
moment per free parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficient
from .kernel_smoothing import KernelConfig, SmootherDiagnostics, nw_regress
from .nuisance_models import (
    NuisanceSpec,
    TreatmentModel,
    ipw_weights,
    q_expectation_given_c,
)
from .rng import RngStream


@dataclass(frozen=True)
class Basis:
    """A p x d reduction basis in the pinned (top-identity) parameterization."""

    matrix: np.ndarray
    parameterization: str = "top-identity"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        p, d = m.shape
        if not 1 <= d < p:
            raise ValueError(f"need p > d >= 1, got shape {m.shape}")
        if not np.array_equal(m[:d], np.eye(d)):
            raise ValueError("top block is not pinned to the identity; use canonicalize")

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    @property
    def free(self) -> np.ndarray:
        """The free (p - d) x d block."""
        return self.matrix[self.d :]

    @property
    def free_vector(self) -> np.ndarray:
        return self.free.ravel()

    @classmethod
    def from_free(cls, free: np.ndarray) -> "Basis":
        free = np.atleast_2d(np.asarray(free, dtype=np.float64))
        return cls(np.vstack([np.eye(free.shape[1]), free]))

    @classmethod
    def from_free_vector(cls, vec: np.ndarray, p: int, d: int) -> "Basis":
        return cls.from_free(np.asarray(vec, dtype=np.float64).reshape(p - d, d))

    @classmethod
    def canonicalize(cls, matrix: np.ndarray) -> "Basis":
        """Re-express any full-rank p x d matrix with an identity top block.

        Right-multiplication by the inverse of the top block preserves the
        column space.  Raises :class:`RankDeficient` when the top block is
        (numerically) singular; reorder coordinates in that case.
        """
        m = np.asarray(matrix, dtype=np.float64)
        d = m.shape[1]
        top = m[:d]
        if np.linalg.cond(top) > 1e10:
            raise RankDeficient("top d x d block is singular; cannot pin to identity")
        out = np.linalg.solve(top.T, m.T).T
        out[:d] = np.eye(d)  # exact pin; solve leaves round-off
        return cls(out)


@dataclass
class MomentDiagnostics:
    """Counters accumulated inside one moment evaluation."""

    kernel_floored: int = 0
    weights_truncated: int = 0


@dataclass
class MomentValue:
    """A stacked empirical moment vector plus evaluation diagnostics."""

    vector: np.ndarray
    diagnostics: MomentDiagnostics = field(default_factory=MomentDiagnostics)
    contributions: np.ndarray | None = None


def _moment_contributions(scale: np.ndarray, r_alpha: np.ndarray, z: np.ndarray, p: int, d: int) -> np.ndarray:
    """Per-sample stacked rows ``scale_i * outer(r_alpha_i[rows], z_i)``.

    For the identity instrument (r == p) the pinned-coordinate rows are
    dropped so the stack matches the free parameters; other instrument sizes
    keep all rows (test-only usage).
    """
    rows = r_alpha[:, d:] if r_alpha.shape[1] == p else r_alpha
    contrib = scale[:, None, None] * rows[:, :, None] * z[:, None, :]
    return contrib.reshape(z.shape[0], -1)


def _projection_residuals(data, beta: Basis, spec: NuisanceSpec, kcfg: KernelConfig,
                          diag: MomentDiagnostics, sample_weights=None):
    """Projected treatment plus leave-one-out residuals of Y and alpha(A)."""
    z = data.a @ beta.matrix
    alpha_vals = spec.alpha_values(data.a)
    sdiag = SmootherDiagnostics()
    smoothed = nw_regress(
        z, np.column_stack([data.y, alpha_vals]), z, kcfg,
        leave_one_out=True, sample_weights=sample_weights, diagnostics=sdiag,
    )
    diag.kernel_floored += sdiag.floored_queries
    ry = data.y - smoothed[:, 0]
    r_alpha = alpha_vals - smoothed[:, 1:]
    return z, ry, r_alpha


def u_regression(data, beta: Basis, spec: NuisanceSpec, kcfg: KernelConfig,
                 *, return_contributions: bool = False) -> MomentValue:
    """Unweighted moment: outcome residual times instrument residual.

    Mean zero at any basis spanning the true reduction when treatment
    assignment is unconfounded; biased otherwise.
    """
    diag = MomentDiagnostics()
    z, ry, r_alpha = _projection_residuals(data, beta, spec, kcfg, diag)
    contrib = _moment_contributions(ry, r_alpha, z, beta.p, beta.d)
    return MomentValue(contrib.mean(axis=0), diag, contrib if return_contributions else None)


def u_ipw(data, beta: Basis, tm: TreatmentModel, spec: NuisanceSpec, kcfg: KernelConfig,
          *, return_contributions: bool = False) -> MomentValue:
    """Inverse-probability-weighted moment.

    Each sample's regression term is weighted by the (truncated) density
    ratio g*(A) / p(A|C), which restores mean zero at the true reduction
    under confounding when the treatment model is correct.
    """
    diag = MomentDiagnostics()
    ref = spec.resolve_reference(data)
    w, n_trunc = ipw_weights(
        tm, ref, data,
        cap_quantile=spec.weight_cap_quantile, cap=spec.weight_cap,
        normalize=spec.weight_normalize,
    )
    diag.weights_truncated += n_trunc
    z, ry, r_alpha = _projection_residuals(
        data, beta, spec, kcfg, diag,
        sample_weights=w if spec.reweight_smoothers else None,
    )
    contrib = _moment_contributions(w * ry, r_alpha, z, beta.p, beta.d)
    return MomentValue(contrib.mean(axis=0), diag, contrib if return_contributions else None)


def u_augmented(data, beta: Basis, tm: TreatmentModel, spec: NuisanceSpec, kcfg: KernelConfig,
                rng: RngStream, *, return_contributions: bool = False) -> MomentValue:
    """Augmented weighted moment with the mean-zero correction pair.

    Adds to the weighted term (i) the weighted model-based estimate of the
    conditional moment given (A, C), built from the fitted shift model, and
    subtracts (ii) its expectation over reference-density draws given C.
    The two corrections cancel in expectation whatever the shift model, so
    consistency survives a misspecified ftilde as long as the treatment
    model and the kernel models are sound.

    ``spec.aug_term2_weighted=False`` switches to a variant that leaves the
    density ratio off the model-based term (for comparison only; it loses
    the built-in cancellation under confounding).

    ``spec.aug_term3`` selects how the conditional-given-C expectation is
    evaluated: ``"reference_draws"`` averages over fresh reference-density
    draws; ``"weighted_empirical"`` importance-reweights the observed
    treatments with the same weights as the other terms, which pairs the
    tail mass of the two correction terms exactly (with normalized weights
    the pair cancels identically for any covariate-free shift model).

    The caller must supply a fitted ``spec.ftilde`` for the current basis
    and an exclusively-owned ``rng``; reusing a stream with the same path
    reproduces the same reference draws (common random numbers).
    """
    if not spec.ftilde.fitted:
        raise ValueError("spec.ftilde must be fitted at the current basis first")
    diag = MomentDiagnostics()
    ref = spec.resolve_reference(data)
    w, n_trunc = ipw_weights(
        tm, ref, data,
        cap_quantile=spec.weight_cap_quantile, cap=spec.weight_cap,
        normalize=spec.weight_normalize,
    )
    diag.weights_truncated += n_trunc
    kernel_weights = w if spec.reweight_smoothers else None
    z, ry, r_alpha = _projection_residuals(data, beta, spec, kcfg, diag, sample_weights=kernel_weights)

    fvals = spec.ftilde.evaluate(data.a, data.c, beta.matrix)
    if spec.aug_term2_weighted:
        scale = w * (ry + fvals)
    else:
        scale = w * ry + fvals
    contrib = _moment_contributions(scale, r_alpha, z, beta.p, beta.d)

    if spec.ftilde.psi.shape[0] > 0:
        if spec.aug_term3 == "weighted_empirical":
            # E_q[. | C_i] as a w-weighted average over the observed treatments,
            # reusing the residual rows already centered for the other terms.
            # The 1/n scaling matches the weighted term exactly, so the pair
            # cancels identically for covariate-free shift models under any
            # common rescaling of the weights.
            rows = _moment_contributions(np.ones(data.n), r_alpha, z, beta.p, beta.d)
            w_rows = (w / data.n)[:, None] * rows
            f_cross = spec.ftilde.evaluate_cross(data.a, data.c, beta.matrix)  # (j, i)
            term3 = np.einsum("ji,jm->im", f_cross, w_rows)
        else:
            alpha_vals = spec.alpha_values(data.a)
            sdiag = SmootherDiagnostics()

            def conditional_moment_model(draws, c):
                z_star = draws @ beta.matrix
                alpha_star = spec.alpha_values(draws)
                smoothed = nw_regress(
                    z, alpha_vals, z_star, kcfg,
                    sample_weights=kernel_weights, diagnostics=sdiag,
                )
                r_alpha_star = alpha_star - smoothed
                outer = _moment_contributions(np.ones(draws.shape[0]), r_alpha_star, z_star, beta.p, beta.d)
                f_cross = spec.ftilde.evaluate_cross(draws, c, beta.matrix)
                return f_cross[:, :, None] * outer[:, None, :]

            term3 = q_expectation_given_c(conditional_moment_model, data.c, ref, spec.mc_draws, rng)
            diag.kernel_floored += sdiag.floored_queries
        contrib = contrib - term3

    return MomentValue(contrib.mean(axis=0), diag, contrib if return_contributions else None)
