"""Inertia (or damping) estimation from windowed measurement variances.

For a window with measured variances ``s_hat`` the estimate minimizes

    C(p) = sum_z (s_hat_z - s_z(p))**2 / s_z(p_ref)**2

where ``s_z(p)`` are the stationary variances of the linearized model with
parameters ``p``. The minimization is a Levenberg-Marquardt iteration in
``u = log p`` (keeps every estimate positive) with the upper bound enforced
by clamping.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .covariance import measurement_variances, solve_lyapunov, variance_sensitivity
from .errors import ConfigError, NumericalError
from .linearization import LinearizedSystem, update_lambda

LOWER_FLOOR = 1e-3
STATIONARY_TOL = 1e-8


@dataclass
class EstimationProblem:
    sys_ref: LinearizedSystem
    selection: list[str]
    measured: dict[str, float]
    params: dict[str, float]
    reference: dict[str, float] | None = None
    upper: float = 100.0
    lower: float = LOWER_FLOOR
    max_iter: int = 200
    cost_tol: float = 1e-12
    step_tol: float = 1e-10
    _ref_var: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.selection = list(self.selection)
        if len(self.selection) < len(self.params):
            raise ConfigError(f"{len(self.params)} parameters cannot be identified from "
                              f"{len(self.selection)} measurements")
        for name in self.params:
            if name not in self.sys_ref.param_rows:
                raise ConfigError(f"unknown parameter {name!r}; known: {sorted(self.sys_ref.param_rows)}")
        for name in self.selection:
            if not self.sys_ref.has(name):
                raise ConfigError(f"unknown measurement {name!r}")
        if self.reference is None:
            self.reference = dict(self.params)
        if any(v <= 0 for v in self.reference.values()):
            raise ConfigError("reference parameter values must be > 0")
        if not self.upper > self.lower:
            raise ConfigError("upper bound must exceed the lower bound")

    @property
    def names(self) -> list[str]:
        return list(self.params)

    @property
    def ref_variances(self) -> np.ndarray:
        if self._ref_var is None:
            v = model_variances(self.sys_ref, self.selection, self.reference)
            if v is None or np.any(v <= 0):
                raise NumericalError("reference variances are not positive; "
                                     "the reference parameter set is unusable")
            self._ref_var = v
        return self._ref_var

    def with_measured(self, measured: dict[str, float]) -> "EstimationProblem":
        p = EstimationProblem(self.sys_ref, self.selection, measured, dict(self.params),
                              dict(self.reference), self.upper, self.lower, self.max_iter,
                              self.cost_tol, self.step_tol)
        p._ref_var = self._ref_var
        return p

    def measured_vector(self) -> np.ndarray:
        try:
            return np.array([float(self.measured[n]) for n in self.selection])
        except KeyError as exc:
            raise ConfigError(f"missing measured variance for {exc.args[0]!r}") from None


def model_variances(sys: LinearizedSystem, selection, params: dict[str, float]):
    """Variances at ``params``, or ``None`` if the system is not asymptotically stable."""
    try:
        s = update_lambda(sys, params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            k = solve_lyapunov(s.a, s.b)
    except NumericalError:
        return None
    return np.array(list(measurement_variances(s, k, selection).values()))


def cost(problem: EstimationProblem, params: dict[str, float]):
    """``(C, residual)``; an unstable candidate gives ``(inf, None)``."""
    v = model_variances(problem.sys_ref, problem.selection, params)
    if v is None:
        return math.inf, None
    r = (problem.measured_vector() - v) / problem.ref_variances
    return float(r @ r), r


@dataclass
class WindowEstimate:
    start_s: float
    estimates: dict[str, float]
    cost: float
    residual: np.ndarray
    iterations: int
    converged: bool
    bound_active: dict[str, bool]
    message: str = ""


def _jacobian(problem, p: np.ndarray):
    """d residual / d log p via finite-difference variance sensitivities."""
    names = problem.names
    s = update_lambda(problem.sys_ref, dict(zip(names, p)))
    J = np.empty((len(problem.selection), len(names)))
    for j, name in enumerate(names):
        d = variance_sensitivity(s, None, problem.selection, name)
        J[:, j] = -np.array([d[n] for n in problem.selection]) * p[j] / problem.ref_variances
    return J


def _free(g, u, lo, hi) -> np.ndarray:
    """Parameters not held at a bound by an outward-pointing gradient."""
    return ~(((u <= lo + 1e-9) & (g > 0)) | ((u >= hi - 1e-9) & (g < 0)))


def _predicted_decrease(J, r, u, lo, hi) -> float:
    """Cost decrease promised by a Gauss-Newton step over the free parameters."""
    free = _free(J.T @ r, u, lo, hi)
    if not free.any():
        return 0.0
    du, *_ = np.linalg.lstsq(J[:, free], -r, rcond=None)
    return float(r @ r - np.sum((r + J[:, free] @ du) ** 2))


def estimate(problem: EstimationProblem, start_s: float = 0.0, initial=None) -> WindowEstimate:
    """Levenberg-Marquardt fit of one window."""
    names = problem.names
    lo, hi = math.log(problem.lower), math.log(problem.upper)
    p0 = problem.params if initial is None else initial
    u = np.clip(np.log([max(float(p0[n]), problem.lower) for n in names]), lo, hi)
    c, r = cost(problem, dict(zip(names, np.exp(u))))
    if r is None:
        raise NumericalError("initial parameters give an unstable linearization")
    mu = None
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, problem.max_iter + 1):
        if c == 0.0:
            converged, message = True, "exact fit"
            break
        J = _jacobian(problem, np.exp(u))
        if _predicted_decrease(J, r, u, lo, hi) <= STATIONARY_TOL * c:
            converged, message = True, "stationary point"
            break
        free = _free(J.T @ r, u, lo, hi)
        J = J[:, free]
        g = J.T @ r
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        if mu is None:
            mu = 1e-3 * float(np.max(diag))
        accepted = False
        for _ in range(40):
            try:
                du = -np.linalg.solve(A + mu * np.diag(diag), g)
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            u_new = u.copy()
            u_new[free] = np.clip(u[free] + du, lo, hi)
            c_new, r_new = cost(problem, dict(zip(names, np.exp(u_new))))
            if c_new < c:
                accepted = True
                break
            mu *= 4.0
        if not accepted:
            converged = bool(c <= problem.cost_tol)
            message = "no further decrease" if converged else "line search failed"
            break
        step = float(np.max(np.abs(u_new - u)))
        drop = c - c_new
        u, c, r = u_new, c_new, r_new
        mu = max(mu / 3.0, 1e-15)
        if step <= problem.step_tol:
            converged, message = True, "step tolerance"
            break
        if drop <= problem.cost_tol * c and step <= 1e-6:
            converged, message = True, "cost tolerance"
            break
    p = np.exp(u)
    bound = {n: bool(u[i] <= lo + 1e-9 or u[i] >= hi - 1e-9) for i, n in enumerate(names)}
    return WindowEstimate(start_s=start_s, estimates=dict(zip(names, p.tolist())), cost=c,
                          residual=r, iterations=it, converged=converged, bound_active=bound,
                          message=message)


@dataclass
class EstimateReport:
    windows: list[WindowEstimate]
    param_set: str = "H"
    truth: dict[str, float] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.windows[0].estimates) if self.windows else []

    def series(self, name: str) -> np.ndarray:
        return np.array([w.estimates[name] for w in self.windows])

    def statistics(self):
        return trial_statistics([self], truth=self.truth)

    def trajectory_rows(self):
        for w in self.windows:
            for n, v in w.estimates.items():
                yield w.start_s, n, v, w.cost, w.converged

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("window_start_s,param,estimate,cost,converged\n")
            for t, n, v, c, ok in self.trajectory_rows():
                fh.write(f"{t:.12g},{n},{v:.12g},{c:.12g},{int(ok)}\n")

    def summary(self) -> dict:
        out = {"param_set": self.param_set, "n_windows": len(self.windows),
               "non_converged": sum(not w.converged for w in self.windows),
               "bound_active": {n: sum(w.bound_active[n] for w in self.windows) for n in self.names}}
        if len(self.windows) >= 4:
            out["statistics"] = {n: s.as_dict() for n, s in self.statistics().items()}
        out.update(self.meta)
        return out


def estimate_series(problem: EstimationProblem, windows, starts=None, systems=None,
                    warm_start: bool = True) -> EstimateReport:
    """Estimate every window; warm-started from the previous window's solution.

    Each warm-started window is also solved from the initial guess and the
    lower-cost solution is kept.

    ``systems`` optionally gives the linearized model valid for each window
    (after operating-point changes). A new system resets the warm start and
    the normalization variances.
    """
    windows = list(windows)
    if not windows:
        raise ConfigError("estimate_series needs at least one window")
    starts = np.arange(len(windows), dtype=float) if starts is None else list(starts)
    out = []
    current_sys = problem.sys_ref
    base = problem
    prev = None
    for k, meas in enumerate(windows):
        sys_k = current_sys if systems is None else systems[k]
        if sys_k is not current_sys:
            base = EstimationProblem(sys_k, problem.selection, meas, dict(problem.params),
                                     dict(problem.reference), problem.upper, problem.lower,
                                     problem.max_iter, problem.cost_tol, problem.step_tol)
            current_sys = sys_k
            prev = None
        prob = base.with_measured(meas)
        base._ref_var = prob.ref_variances
        try:
            w = estimate(prob, start_s=float(starts[k]), initial=prev if warm_start else None)
            if warm_start and prev is not None:
                # guard against a warm start trapped in a neighbouring basin
                cold = estimate(prob, start_s=float(starts[k]))
                if cold.cost < w.cost:
                    w = cold
        except NumericalError as exc:
            w = WindowEstimate(float(starts[k]), {n: math.nan for n in problem.names}, math.inf,
                               np.full(len(problem.selection), math.nan), 0, False,
                               {n: False for n in problem.names}, f"failed: {exc}")
        out.append(w)
        if w.converged:
            prev = w.estimates
    return EstimateReport(windows=out)


# --------------------------------------------------------------------------- statistics

@dataclass(frozen=True)
class ViolinStats:
    n: int
    median: float
    q1: float
    q3: float
    iqr: float
    lower_adjacent: float
    upper_adjacent: float
    eps_pct: float | None = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def violin_stats(values, truth: float | None = None) -> ViolinStats:
    """Median, quartiles (linear interpolation), IQR and adjacent values."""
    x = np.sort(np.asarray(values, dtype=float))
    x = x[np.isfinite(x)]
    if x.size < 4:
        raise ConfigError(f"violin statistics need at least 4 estimates, got {x.size}")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    upper = x[x <= q3 + 1.5 * iqr].max()
    lower = x[x >= q1 - 1.5 * iqr].min()
    eps = None if truth is None else 100.0 * abs(med - truth) / abs(truth)
    return ViolinStats(int(x.size), float(med), float(q1), float(q3), float(iqr),
                       float(lower), float(upper), eps)


def trial_statistics(reports, truth: dict[str, float] | None = None) -> dict[str, ViolinStats]:
    """Pool the window estimates of all reports per parameter."""
    reports = list(reports)
    names = reports[0].names
    out = {}
    for n in names:
        vals = np.concatenate([r.series(n) for r in reports])
        out[n] = violin_stats(vals, None if truth is None else truth.get(n))
    return out


def write_summary(path, stats: dict[str, ViolinStats], extra: dict | None = None) -> None:
    doc = {"statistics": {n: s.as_dict() for n, s in stats.items()}}
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def gauss_newton_hessian(problem: EstimationProblem, params: dict[str, float] | None = None):
    """``J^T J`` of the normalized residual in log-parameters."""
    p = np.array([(params or problem.params)[n] for n in problem.names], dtype=float)
    J = _jacobian(problem, p)
    return J.T @ J


def is_identifiable(problem: EstimationProblem, params=None, rtol: float = 1e-10) -> bool:
    ev = np.linalg.eigvalsh(gauss_newton_hessian(problem, params))
    return bool(ev.min() > rtol * max(ev.max(), 1e-300))
