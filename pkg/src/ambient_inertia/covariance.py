"""Stationary covariance of the linearized SDE and measurement variances."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import LyapunovError, StabilityError
from .linearization import LinearizedSystem, update_lambda

SENS_REL_STEP = 1e-4
RESIDUAL_TOL = 1e-10
REFINE_STEPS = 2


@dataclass(frozen=True)
class CovarianceResult:
    k_xt: np.ndarray
    k_zeta: dict[str, float]
    residual_norm: float


def lyapunov_residual(a, k, b) -> float:
    q = b @ b.T
    return float(np.max(np.abs(a @ k + k @ a.T + q), initial=0.0))


def solve_lyapunov(a: np.ndarray, b: np.ndarray, check: bool = True) -> np.ndarray:
    """Solve ``a K + K a^T + b b^T = 0`` (real Schur / Bartels-Stewart).

    ``a`` must be Hurwitz. The result is symmetrized. A residual above
    ``1e-10 * ||b b^T||`` triggers up to two refinement steps, then a warning.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return np.zeros((0, 0))
    if check:
        ev = np.linalg.eigvals(a)
        if np.max(ev.real) >= 0:
            bad = ev[ev.real >= 0]
            raise StabilityError("Lyapunov equation needs a Hurwitz matrix; eigenvalues "
                                 + ", ".join(f"{z:.4g}" for z in bad), eigenvalues=bad)
    q = b @ b.T
    k = scipy.linalg.solve_continuous_lyapunov(a, -q)
    k = 0.5 * (k + k.T)
    if not np.all(np.isfinite(k)):
        raise LyapunovError("Lyapunov solve produced non-finite values")
    res = lyapunov_residual(a, k, b)
    qn = max(float(np.max(np.abs(q), initial=0.0)), np.finfo(float).tiny)
    for _ in range(REFINE_STEPS):
        if res <= RESIDUAL_TOL * qn:
            break
        # iterative refinement on the residual equation
        dk = scipy.linalg.solve_continuous_lyapunov(a, -(a @ k + k @ a.T + q))
        k = k + 0.5 * (dk + dk.T)
        res = lyapunov_residual(a, k, b)
    if res > RESIDUAL_TOL * qn:
        warnings.warn(f"ill-conditioned Lyapunov solve: residual {res:.3e} "
                      f"(||BB^T|| = {qn:.3e})", RuntimeWarning, stacklevel=2)
    return k


def solve_lyapunov_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference solution by vectorization: ``vec K = -(I (x) a + a (x) I)^-1 vec(b b^T)``."""
    n = a.shape[0]
    eye = np.eye(n)
    big = np.kron(eye, a) + np.kron(a, eye)
    q = (b @ b.T).reshape(-1, order="F")
    k = np.linalg.solve(big, -q).reshape((n, n), order="F")
    return 0.5 * (k + k.T)


def measurement_variances(sys: LinearizedSystem, k_xt: np.ndarray, selection) -> dict[str, float]:
    """``c K c^T`` for every selected name (clipped at zero against round-off)."""
    out = {}
    for name in selection:
        c = sys.observation_row(name)
        out[name] = max(float(c @ k_xt @ c), 0.0)
    return out


def covariance(sys: LinearizedSystem, selection=()) -> CovarianceResult:
    k = solve_lyapunov(sys.a, sys.b)
    return CovarianceResult(k_xt=k, k_zeta=measurement_variances(sys, k, selection),
                            residual_norm=lyapunov_residual(sys.a, k, sys.b))


def variances_at(sys: LinearizedSystem, selection, params: dict[str, float] | None = None):
    """Variances after moving ``sys`` to ``params`` through the fast update path."""
    s = update_lambda(sys, params) if params else sys
    k = solve_lyapunov(s.a, s.b)
    return np.array([v for v in measurement_variances(s, k, selection).values()])


def variance_sensitivity(sys: LinearizedSystem, k_xt, selection, param: str,
                         rel_step: float = SENS_REL_STEP) -> dict[str, float]:
    """Central finite-difference derivative of each variance with respect to ``param``.

    ``k_xt`` is accepted for interface symmetry; the derivative is formed from
    two fresh solves at ``param * (1 +- rel_step)``.
    """
    p0 = sys.param_values[param]
    h = rel_step * max(abs(p0), 1e-3)
    if param.startswith("H_"):
        h = min(h, 0.5 * p0)
    selection = list(selection)
    vp = variances_at(sys, selection, {param: p0 + h})
    if p0 - h < 0:
        # damping at its lower bound: one-sided difference
        v0 = variances_at(sys, selection)
        return dict(zip(selection, (vp - v0) / h))
    vm = variances_at(sys, selection, {param: p0 - h})
    return dict(zip(selection, (vp - vm) / (2 * h)))
