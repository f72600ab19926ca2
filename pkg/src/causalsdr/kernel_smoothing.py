"""Multivariate Epanechnikov kernel regression.

Every conditional expectation indexed by a projected treatment is estimated
with the same Nadaraya-Watson smoother: a product Epanechnikov kernel over
the projection coordinates, a single bandwidth shared by all coordinates,
and a floor on the kernel denominator that falls back to the global mean of
the regressand at queries where the local weight mass vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllWeightsZero, EmptySampleSet

ROT_CONSTANT = 2.34  # Epanechnikov rule-of-thumb plug-in constant

_QUERY_CHUNK = 2048  # bound the (chunk x n) weight block to ~100 MB at n=5000


@dataclass(frozen=True)
class KernelConfig:
    """Smoother settings.

    ``bandwidth=None`` means: apply the rule of thumb
    ``h = rot_constant * sigma_hat * n**(-1/(d+4))`` to the sample
    projections at hand, with ``sigma_hat`` the mean per-coordinate
    standard deviation.

    ``bias_correct`` replaces each smoothed value with the two-bandwidth
    extrapolation ``2 * m(h/sqrt(2)) - m(h)``, which cancels the leading
    quadratic smoothing bias.  Off by default; the plain estimate then
    stays inside the envelope of the regressand values.
    """

    bandwidth: float | None = None
    denom_floor: float = 1e-8
    rot_constant: float = ROT_CONSTANT
    bias_correct: bool = False

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.denom_floor < 0:
            raise ValueError(f"denom_floor must be >= 0, got {self.denom_floor}")

    def resolve_bandwidth(self, projections: np.ndarray) -> float:
        if self.bandwidth is not None:
            return self.bandwidth
        return rule_of_thumb_bandwidth(projections, self.rot_constant)


@dataclass(frozen=True)
class ProjectedSample:
    """One regression sample: a d-vector projection and its regressand."""

    projection: np.ndarray
    value: np.ndarray


@dataclass
class SmootherDiagnostics:
    """Counts of queries where the denominator floor kicked in."""

    floored_queries: int = 0
    query_count: int = 0

    def merge(self, other: "SmootherDiagnostics") -> None:
        self.floored_queries += other.floored_queries
        self.query_count += other.query_count


def epanechnikov(u):
    """Epanechnikov kernel, ``0.75 * (1 - u^2)`` on [-1, 1] and 0 outside."""
    u = np.asarray(u, dtype=np.float64)
    out = 0.75 * np.maximum(0.0, 1.0 - u * u)
    return out if out.ndim else float(out)


def rule_of_thumb_bandwidth(projections: np.ndarray, c: float = ROT_CONSTANT) -> float:
    """Plug-in bandwidth ``c * sigma_hat * n**(-1/(d+4))``."""
    z = np.atleast_2d(np.asarray(projections, dtype=np.float64))
    n, d = z.shape
    sigma = float(np.mean(np.std(z, axis=0)))
    if sigma <= 0.0:
        sigma = 1.0  # degenerate projections; any h gives the global mean
    return c * sigma * n ** (-1.0 / (d + 4))


def product_kernel(u, cfg: KernelConfig) -> float:
    """Product of per-coordinate scaled kernels, ``prod_j K(u_j/h)/h``."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    h = cfg.bandwidth
    if h is None:
        raise ValueError("product_kernel needs an explicit bandwidth")
    return float(np.prod(epanechnikov(u / h) / h))


def nw_regress(
    projections: np.ndarray,
    values: np.ndarray,
    queries: np.ndarray,
    cfg: KernelConfig,
    *,
    leave_one_out: bool = False,
    sample_weights: np.ndarray | None = None,
    diagnostics: SmootherDiagnostics | None = None,
    on_zero: str = "mean",
) -> np.ndarray:
    """Nadaraya-Watson estimate of E[value | projection] at each query.

    Parameters
    ----------
    projections : (n, d) array
        Sample projections.
    values : (n,) or (n, m) array
        Regressand(s); columns share one weight set.
    queries : (q, d) array
        Evaluation points.
    leave_one_out : bool
        Drop the i-th sample at the i-th query.  Requires
        ``queries is projections`` row-alignment (q == n).
    sample_weights : (n,) array, optional
        Nonnegative per-sample weights multiplying the kernel weights.
    diagnostics : SmootherDiagnostics, optional
        Incremented with the number of queries whose denominator fell
        below ``cfg.denom_floor``.
    on_zero : {"mean", "raise"}
        At floored queries either return the global (weighted) mean of the
        values or raise :class:`AllWeightsZero`.

    Returns
    -------
    (q,) or (q, m) array of smoothed values.
    """
    z = np.atleast_2d(np.asarray(projections, dtype=np.float64))
    if z.shape[0] == 0:
        raise EmptySampleSet("kernel regression needs at least one sample")
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 1
    v2 = v[:, None] if squeeze else v
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n, d = z.shape
    if q.shape[1] != d:
        raise ValueError(f"query dim {q.shape[1]} != projection dim {d}")
    if leave_one_out and q.shape[0] != n:
        raise ValueError("leave-one-out requires queries aligned with samples")

    h = cfg.resolve_bandwidth(z)
    sw = None if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)

    if sw is not None and sw.sum() > 0:
        fallback = (sw[:, None] * v2).sum(axis=0) / sw.sum()
    else:
        fallback = v2.mean(axis=0)

    out, floored = _nw_pass(z, v2, q, h, cfg.denom_floor, leave_one_out, sw, fallback)
    n_floored = int(np.count_nonzero(floored))
    if diagnostics is not None:
        diagnostics.floored_queries += n_floored
        diagnostics.query_count += q.shape[0]
    if n_floored and on_zero == "raise":
        raise AllWeightsZero(f"{n_floored} queries have no kernel mass at h={h:.4g}")

    if cfg.bias_correct:
        small, floored_s = _nw_pass(
            z, v2, q, h / np.sqrt(2.0), cfg.denom_floor, leave_one_out, sw, fallback
        )
        corrected = 2.0 * small - out
        # keep the plain estimate where the narrow pass has no kernel mass
        corrected[floored_s] = out[floored_s]
        out = corrected
    return out[:, 0] if squeeze else out


def _nw_pass(z, v2, q, h, denom_floor, leave_one_out, sw, fallback):
    """One weighted-average pass at a fixed bandwidth."""
    n, d = z.shape
    num = np.empty((q.shape[0], v2.shape[1]))
    den = np.empty(q.shape[0])
    inv_h = 1.0 / h
    for lo in range(0, q.shape[0], _QUERY_CHUNK):
        hi = min(lo + _QUERY_CHUNK, q.shape[0])
        w = np.ones((hi - lo, n))
        for j in range(d):
            u = (q[lo:hi, j, None] - z[None, :, j]) * inv_h
            w *= np.maximum(0.0, 1.0 - u * u)
        # the 0.75/h per-coordinate scale cancels in the ratio; keep it so the
        # denominator is the actual kernel density mass used for trimming
        w *= (0.75 * inv_h) ** d
        if sw is not None:
            w *= sw[None, :]
        if leave_one_out:
            idx = np.arange(lo, hi)
            w[idx - lo, idx] = 0.0
        num[lo:hi] = w @ v2
        den[lo:hi] = w.sum(axis=1)

    floored = den < denom_floor
    out = np.empty_like(num)
    ok = ~floored
    out[ok] = num[ok] / den[ok, None]
    if np.any(floored):
        out[floored] = fallback
    return out, floored


def kernel_regress(samples, query, cfg: KernelConfig):
    """Smoothed value at one query point from a list of samples.

    ``samples`` is a sequence of :class:`ProjectedSample`; all projections
    must share one length and all values one shape.  Convenience wrapper
    over :func:`nw_regress` for scalar-query use and tests.
    """
    samples = list(samples)
    if not samples:
        raise EmptySampleSet("kernel regression needs at least one sample")
    z = np.stack([np.atleast_1d(np.asarray(s.projection, dtype=np.float64)) for s in samples])
    v = np.stack([np.atleast_1d(np.asarray(s.value, dtype=np.float64)) for s in samples])
    q = np.atleast_1d(np.asarray(query, dtype=np.float64))[None, :]
    out = nw_regress(z, v, q, cfg)[0]
    return float(out[0]) if out.shape == (1,) else out
