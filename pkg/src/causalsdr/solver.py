"""Damped Newton root finder over the free basis parameters.

The moment functions are treated as black boxes: derivatives come from
central differences, steps are damped, and failed runs restart from a
jittered copy of the starting point.  The best iterate seen anywhere is
returned, so the result never has a worse moment norm than the start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteEntry
from .estimating_equations import Basis, MomentValue
from .rng import RngStream

_DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class SolverConfig:
    """Newton iteration settings.

    ``tolerance=None`` resolves to ``1e-4 * sqrt(n_free)`` so the per-moment
    scale does not depend on the problem size.  A run that has not improved
    its best norm for ``stall_limit`` consecutive iterations gives up early
    and proceeds to the next restart.

    ``fd_step`` is deliberately coarse: kernel-smoothed moments are wiggly
    at the sample-spacing scale, and a macro-scale secant derivative tracks
    the trend instead of the wiggles.  ``max_step`` caps the damped Newton
    step (in free-parameter norm) so one bad Jacobian cannot throw the
    iterate out of its basin.
    """

    max_iterations: int = 100
    tolerance: float | None = None
    step_damping: float = 0.5
    fd_step: float = 0.05
    restarts: int = 5
    jitter_scale: float = 0.1
    stall_limit: int = 10
    max_step: float = 0.25

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.step_damping <= 1.0:
            raise ValueError("step_damping must be in (0, 1]")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if not self.jitter_scale > 0:
            raise ValueError("jitter_scale must be positive")
        if self.stall_limit < 1:
            raise ValueError("stall_limit must be >= 1")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    def resolve_tolerance(self, n_free: int) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return 1e-4 * np.sqrt(n_free)


@dataclass(frozen=True)
class SolveResult:
    beta_hat: Basis
    converged: bool
    iterations: int
    final_norm: float
    restart_index: int
    singular_steps: int = 0


def _moment_vector(value) -> np.ndarray:
    vec = np.asarray(getattr(value, "vector", value), dtype=np.float64)
    return vec.ravel()


def numeric_jacobian(moment_fn, beta: Basis, fd_step: float) -> np.ndarray:
    """Central-difference Jacobian of the moment vector in the free entries.

    The step for entry j is ``fd_step * (1 + |theta_j|)``.  Raises
    :class:`NonFiniteEntry` if any perturbed evaluation is not finite.
    """
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    theta = beta.free_vector.copy()
    p, d = beta.p, beta.d
    cols = []
    for j in range(theta.shape[0]):
        h = fd_step * (1.0 + abs(theta[j]))
        for sign in (1.0, -1.0):
            theta[j] += sign * h
            vec = _moment_vector(moment_fn(Basis.from_free_vector(theta, p, d)))
            if not np.all(np.isfinite(vec)):
                raise NonFiniteEntry(f"moment not finite at perturbed entry {j}")
            theta[j] -= sign * h
            if sign > 0:
                plus = vec
            else:
                cols.append((plus - vec) / (2.0 * h))
    return np.column_stack(cols)


def solve(moment_fn, start: Basis, cfg: SolverConfig, rng: RngStream,
          selection_fn=None) -> SolveResult:
    """Drive the moment vector to (near) zero starting from ``start``.

    Runs damped, step-capped Newton up to ``cfg.max_iterations``; on
    divergence or a stalled budget, restarts from ``start`` plus
    ``jitter_scale`` Gaussian noise on the free entries, up to
    ``cfg.restarts`` times.  Singular Jacobians fall back to the
    pseudo-inverse step and are counted.  Identical inputs and stream
    produce identical results.

    ``selection_fn(basis) -> float``, when given, ranks the visited
    iterates instead of the raw moment norm.  Noisy empirical moments have
    spurious exact zeros, so callers typically rank by a held-out-sample
    moment norm; the reported ``final_norm`` is always the full moment norm
    at the returned iterate.
    """
    p, d = start.p, start.d
    m0 = _moment_vector(moment_fn(start))
    tol = cfg.resolve_tolerance(m0.shape[0])
    norm0 = float(np.linalg.norm(m0))

    def score_of(beta, norm):
        return norm if selection_fn is None else float(selection_fn(beta))

    best_score = score_of(start, norm0)
    best_beta, best_norm, best_restart = start, norm0, 0
    iterations = 0
    singular_steps = 0

    for restart_index in range(cfg.restarts + 1):
        if restart_index == 0:
            beta = start
            m, norm = m0, norm0
        else:
            jitter = cfg.jitter_scale * rng.child("restart", restart_index).normal((p - d) * d)
            beta = Basis.from_free_vector(start.free_vector + jitter, p, d)
            m = _moment_vector(moment_fn(beta))
            norm = float(np.linalg.norm(m))
            if not np.isfinite(norm):
                continue
            score = score_of(beta, norm)
            if score < best_score:
                best_score, best_beta, best_norm, best_restart = score, beta, norm, restart_index
        if norm <= tol:
            return SolveResult(beta, True, iterations, norm, restart_index, singular_steps)

        run_best = norm
        stalled = 0
        for _ in range(cfg.max_iterations):
            try:
                jac = numeric_jacobian(moment_fn, beta, cfg.fd_step)
            except NonFiniteEntry:
                break
            try:
                step = np.linalg.solve(jac, m)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                step = np.linalg.pinv(jac) @ m
                singular_steps += 1
            step = cfg.step_damping * step
            step_norm = float(np.linalg.norm(step))
            if step_norm > cfg.max_step:
                step *= cfg.max_step / step_norm
            beta = Basis.from_free_vector(beta.free_vector - step, p, d)
            iterations += 1
            m = _moment_vector(moment_fn(beta))
            norm = float(np.linalg.norm(m))
            if not np.isfinite(norm) or norm > _DIVERGENCE_NORM:
                break
            score = score_of(beta, norm)
            if score < best_score:
                best_score, best_beta, best_norm, best_restart = score, beta, norm, restart_index
            if norm <= tol:
                return SolveResult(beta, True, iterations, norm, restart_index, singular_steps)
            if norm < run_best:
                run_best, stalled = norm, 0
            else:
                stalled += 1
                if stalled >= cfg.stall_limit:
                    break

    return SolveResult(best_beta, best_norm <= tol, iterations, best_norm, best_restart, singular_steps)
