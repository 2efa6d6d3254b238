"""Cross-module oracle checks run by ``ambient-inertia verify``."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import pipeline
from .config import RunConfig
from .covariance import covariance, lyapunov_residual, solve_lyapunov, solve_lyapunov_kron
from .filtering import BandpassSpec, filter_trace
from .linearization import linearize

KRON_MAX_STATES = 60


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def batch_standard_error(x: np.ndarray, n_batches: int = 8) -> float:
    """Standard error of the sample variance by non-overlapping batch means."""
    m = x.size // n_batches
    v = x[: m * n_batches].reshape(n_batches, m).var(axis=1, ddof=1)
    return float(v.std(ddof=1) / np.sqrt(n_batches))


def check_lyapunov(sys) -> list[CheckResult]:
    out = []
    k = solve_lyapunov(sys.a, sys.b)
    res = lyapunov_residual(sys.a, k, sys.b)
    qn = float(np.max(np.abs(sys.b @ sys.b.T)))
    out.append(CheckResult("lyapunov residual", res <= 1e-10 * qn,
                           f"{res:.2e} <= 1e-10 * {qn:.2e}"))
    if sys.n <= KRON_MAX_STATES:
        kk = solve_lyapunov_kron(sys.a, sys.b)
        err = float(np.max(np.abs(k - kk)) / np.max(np.abs(kk)))
        out.append(CheckResult("lyapunov vs kronecker", err <= 1e-10, f"max rel diff {err:.2e}"))
    return out


def check_filter(spec: BandpassSpec, sample_dt: float) -> CheckResult:
    f = np.array([spec.center_hz, spec.f_lo, spec.f_hi, spec.f_lo / 10])
    mag = np.abs(spec.frequency_response(f))
    want = np.array([1.0, 2 ** -0.5, 2 ** -0.5])
    err = float(np.max(np.abs(mag[:3] - want)))
    ok = err <= 1e-6 and mag[3] < 1e-3
    import scipy.signal

    _, hd = scipy.signal.sosfreqz(spec.digital_sos(1.0 / sample_dt), worN=[spec.center_hz],
                                  fs=1.0 / sample_dt)
    dig = abs(abs(hd[0]) - 1.0)
    ok = ok and dig < 1e-2
    return CheckResult("filter response", bool(ok),
                       f"|H| centre/edges err {err:.1e}, stopband {mag[3]:.1e}, digital centre err {dig:.1e}")


def check_monte_carlo(truth_cfg: RunConfig, model_cfg: RunConfig, duration_s: float,
                      seed: int, n_sigma: float = 4.0, floor: float = 0.05) -> list[CheckResult]:
    """Analytic variances of ``model_cfg`` against a simulation of ``truth_cfg``.

    The tolerance is ``max(floor, n_sigma * SE)`` with SE the batch-means
    standard error of the empirical variance.
    """
    names = pipeline.measurement_names(model_cfg)
    spec = BandpassSpec.from_config(model_cfg.measurement.filter)
    out = []
    trace = pipeline.simulate_config(truth_cfg, seed=seed, names=names, duration_s=duration_s)
    filt = filter_trace(trace, spec, names, discard_s=300.0)
    model = pipeline.truth_model(model_cfg)
    for filtered, tr in ((False, trace), (True, filt)):
        sys, observed = pipeline.observed_system(model, model_cfg, names, filtered)
        analytic = covariance(sys, observed).k_zeta
        worst, ok = 0.0, True
        for n, o in zip(names, observed):
            x = tr[n]
            emp = float(x.var(ddof=1))
            rel = abs(emp - analytic[o]) / analytic[o]
            tol = max(floor, n_sigma * batch_standard_error(x) / emp)
            ok &= rel <= tol
            worst = max(worst, rel / tol)
        label = "filtered" if filtered else "raw"
        out.append(CheckResult(f"analytic vs monte-carlo ({label})", bool(ok),
                               f"{len(names)} measurements, worst error/tolerance {worst:.2f}"))
    return out


def check_backends(model, n_steps: int = 400) -> CheckResult | None:
    from . import kernel
    from .sde import Integrator

    if "compiled" not in kernel.BACKENDS:
        return None
    rng = np.random.default_rng(0)
    normals = rng.standard_normal((n_steps, model.n_noise))
    results = []
    for backend in ("compiled", "python"):
        integ = Integrator(model, 0.005, backend)
        z = np.concatenate([model.xi0, model.zeta0[: model.arrays.n_core]])
        eta = np.zeros(model.n_noise)
        sel, need = integ.selection(model.measurement_names)
        out = np.empty((n_steps, sel.size))
        integ.run(z, eta, normals, 0, 1, sel, out, 0, need)
        results.append(out)
    diff = float(np.max(np.abs(results[0] - results[1])))
    return CheckResult("compiled vs python kernel", diff <= 1e-9, f"max diff {diff:.1e} over {n_steps} steps")


def run_checks(truth_cfg: RunConfig, model_cfg: RunConfig | None = None,
               duration_s: float = 3600.0, seed: int = 1) -> list[CheckResult]:
    model_cfg = truth_cfg if model_cfg is None else model_cfg
    t0 = time.perf_counter()
    model = pipeline.truth_model(model_cfg)
    res_f, res_g = model.residual_at_equilibrium()
    out = [CheckResult("equilibrium", max(res_f, res_g) <= 1e-8,
                       f"residuals {res_f:.1e}, {res_g:.1e}")]
    sys = linearize(model)
    out.append(CheckResult("small-signal stability", sys.max_real_eig < 0,
                           f"max real eigenvalue {sys.max_real_eig:.4g}"))
    out += check_lyapunov(sys)
    out.append(check_filter(BandpassSpec.from_config(model_cfg.measurement.filter),
                            model_cfg.measurement.sample_dt_s))
    be = check_backends(model)
    if be is not None:
        out.append(be)
    out += check_monte_carlo(truth_cfg, model_cfg, duration_s, seed)
    out.append(CheckResult("runtime", True, f"{time.perf_counter() - t0:.1f} s"))
    return out
