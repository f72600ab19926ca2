"""Seeded data generators for the benchmark scenarios.

Two treatment designs are provided at p in {6, 12}, each in three
confounding variants:

* ``confounded`` -- treatment means depend on the baseline covariates and
  the outcome carries the covariate sum, so naive regression is biased;
* ``noise_only`` -- treatment is independent of the covariates (all
  conditional means zeroed) but the covariate sum still adds outcome noise;
* ``none`` -- treatment independent of covariates and the covariate sum
  removed from the outcome entirely.

The outcome always depends on the treatment only through two fixed linear
scores, which is the ground-truth reduction every estimator targets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .rng import RngStream

CASES = ("case1", "case2")
CONFOUNDING = ("none", "noise_only", "confounded")
N_COVARIATES = 4
TRUE_D = 2


@dataclass(frozen=True)
class ScenarioSpec:
    """One point of the simulation grid."""

    case: str
    p: int
    confounding: str
    n: int
    seed: int

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}, got {self.case!r}")
        if self.p not in (6, 12):
            raise ValueError(f"p must be 6 or 12, got {self.p}")
        if self.confounding not in CONFOUNDING:
            raise ValueError(f"confounding must be one of {CONFOUNDING}")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def label(self) -> str:
        return f"{self.case}_p{self.p}_n{self.n}_{self.confounding}"


@dataclass(frozen=True)
class SimulationTruth:
    """Ground-truth reduction directions (p x 2, unit-norm columns)."""

    beta_true: np.ndarray

    @property
    def d(self) -> int:
        return self.beta_true.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Row-aligned outcome, treatment matrix and baseline covariates."""

    y: np.ndarray
    a: np.ndarray
    c: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]


@dataclass(frozen=True)
class Latents:
    """Generator internals retained for reconstruction tests."""

    epsilon: np.ndarray
    bernoulli_uniforms: np.ndarray | None


def true_basis(p: int) -> SimulationTruth:
    """The fixed target directions: all-ones and alternating-sign scores.

    For p = 12 the last six coordinates carry no signal (zero rows).
    """
    b1 = np.ones(6) / np.sqrt(6.0)
    b2 = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]) / np.sqrt(6.0)
    beta = np.zeros((p, TRUE_D))
    beta[:6, 0] = b1
    beta[:6, 1] = b2
    return SimulationTruth(beta_true=beta)


def ar_covariance(size: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(size)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _covariates(n: int, stream: RngStream) -> np.ndarray:
    c = np.empty((n, N_COVARIATES))
    c[:, 0] = stream.chisq2(n)
    c[:, 1] = stream.normal(n)
    c[:, 2] = np.abs(c[:, 0] + c[:, 1])
    c[:, 3] = np.sqrt(c[:, 0] * c[:, 2])
    return c


def _case2_means(c: np.ndarray, p: int) -> np.ndarray:
    c1, c2, c3, c4 = c.T
    total = c.sum(axis=1)
    mu = np.empty((c.shape[0], p))
    mu[:, 0] = total
    mu[:, 1] = -c1 + c2 - c3 + c4
    mu[:, 2] = c1 - c2 - c3 + c4
    mu[:, 3] = -c1 + c2 + c3 - c4
    mu[:, 4] = total - 2.0 * c3
    mu[:, 5] = -c1 + c2 + c3 + c4
    if p == 12:
        mu[:, 6:9] = c[:, :3]
        mu[:, 9:12] = -c[:, :3]
    return mu


def _case1_block_means(c: np.ndarray, p: int) -> np.ndarray:
    # means of the jointly-normal coordinates (A1, A2[, A7..A12]) in that order
    c1, c2, c3, c4 = c.T
    total = c.sum(axis=1)
    mu = np.empty((c.shape[0], p - 4))
    mu[:, 0] = total
    mu[:, 1] = -c1 + c2 - c3 + c4
    if p == 12:
        mu[:, 2] = c1
        mu[:, 3] = c2
        mu[:, 4] = c3
        mu[:, 5] = -c1 + c2
        mu[:, 6] = -c2 + c3
        mu[:, 7] = -c3 + c4
    return mu


def generate(spec: ScenarioSpec, *, with_latents: bool = False):
    """Draw one dataset (and its truth) for a scenario.

    Deterministic given ``spec``: streams are split off the scenario seed as
    ``c`` (covariates), ``a`` (treatment), ``y`` (outcome noise), and within
    ``a`` the draws are consumed in the documented coordinate order.

    Returns ``(Dataset, SimulationTruth)``, plus a :class:`Latents` record
    when ``with_latents`` is set.
    """
    root = RngStream(spec.seed, "scenario", spec.case, spec.p, spec.confounding, spec.n)
    n, p = spec.n, spec.p
    c = _covariates(n, root.child("c"))
    confounded = spec.confounding == "confounded"

    a_stream = root.child("a")
    bern_u = None
    if spec.case == "case2":
        mu = _case2_means(c, p) if confounded else np.zeros((n, p))
        a = a_stream.multivariate_normal(mu, ar_covariance(p), n)
    else:
        mu = _case1_block_means(c, p) if confounded else np.zeros((n, p - 4))
        block = a_stream.multivariate_normal(mu, ar_covariance(p - 4), n)
        a = np.empty((n, p))
        a[:, 0] = block[:, 0]
        a[:, 1] = block[:, 1]
        if p == 12:
            a[:, 6:12] = block[:, 2:8]
        a1, a2 = a[:, 0], a[:, 1]
        a[:, 2] = np.abs(a1 + a2) + np.sqrt(np.abs(a1)) * a_stream.normal(n)
        a[:, 3] = np.sqrt(np.abs(a1 + a2)) + np.sqrt(np.abs(a2)) * a_stream.normal(n)
        bern_u = a_stream.uniform((2, n))
        a[:, 4] = (bern_u[0] < 1.0 / (1.0 + np.exp(-a2))).astype(np.float64)
        a[:, 5] = (bern_u[1] < ndtr(a2)).astype(np.float64)

    truth = true_basis(p)
    eps = root.child("y").normal(n)
    s1 = a @ truth.beta_true[:, 0]
    s2 = a @ truth.beta_true[:, 1]
    y = s1 ** 2 + s2 ** 2 + 0.5 * eps
    if spec.confounding != "none":
        y = y + c.sum(axis=1)

    data = Dataset(y=y, a=a, c=c)
    if with_latents:
        return data, truth, Latents(epsilon=eps, bernoulli_uniforms=bern_u)
    return data, truth


def true_projection_targets(truth: SimulationTruth) -> np.ndarray:
    """Column-space projector of the true directions."""
    b = truth.beta_true
    return b @ np.linalg.solve(b.T @ b, b.T)


def true_treatment_coefficients(case: str, p: int, confounding: str = "confounded"):
    """Exact conditional-mean coefficients and covariance of the treatment.

    Only the fully Gaussian design has a linear-Gaussian truth; the mixed
    design raises.  Returns ``(coef, covariance)`` with ``coef`` shaped
    (1 + n_covariates, p) mapping ``[1, C]`` to the conditional mean, i.e.
    the true-parameter version of the fitted treatment model.
    """
    if case != "case2":
        raise ValueError("only the all-Gaussian treatment design is linear-Gaussian")
    coef = np.zeros((1 + N_COVARIATES, p))
    if confounding == "confounded":
        eye4 = np.eye(N_COVARIATES)
        coef[1:] = _case2_means(eye4, p) - _case2_means(np.zeros((N_COVARIATES, N_COVARIATES)), p)
    return coef, ar_covariance(p)


def write_dataset_csv(data: Dataset, path) -> None:
    """Write ``y,a1..ap,c1..c4`` rows with 17 significant digits."""
    path = Path(path)
    header = ["y"] + [f"a{j + 1}" for j in range(data.p)] + [f"c{k + 1}" for k in range(data.c.shape[1])]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [data.y[i], *data.a[i], *data.c[i]]
            writer.writerow([f"{x:.17g}" for x in row])


def read_dataset_csv(path) -> Dataset:
    """Read a dataset written by :func:`write_dataset_csv`."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(x) for x in row] for row in reader])
    if not header or header[0] != "y":
        raise ValueError(f"unrecognized dataset header: {header[:3]}...")
    p = sum(1 for name in header if name.startswith("a"))
    n_c = sum(1 for name in header if name.startswith("c"))
    return Dataset(y=rows[:, 0], a=rows[:, 1 : 1 + p], c=rows[:, 1 + p : 1 + p + n_c])
