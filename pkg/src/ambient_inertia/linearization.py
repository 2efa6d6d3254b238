"""Linearization of the noisy DAE around its equilibrium.

Produces the drift ``a`` and diffusion ``b`` of the augmented linear SDE
``dX = a X dt + b dW`` with ``X = [xi_eta, eta]`` and the sensitivity ``e``
mapping ``X`` to small-signal algebraic variations.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, SingularJacobianError, StabilityError
from .model import DynamicModel

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class Jacobians:
    f_xi: np.ndarray
    f_zeta: np.ndarray
    g_xi: np.ndarray
    g_zeta: np.ndarray


@dataclass(frozen=True)
class LinearizedSystem:
    a: np.ndarray
    b: np.ndarray
    e: np.ndarray
    j: np.ndarray
    state_names: list[str]
    alg_names: list[str]
    equilibrium: tuple[np.ndarray, np.ndarray]
    lambda_diag: np.ndarray
    param_values: dict[str, float]
    param_rows: dict[str, int]
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    n_base: int = 0

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def max_real_eig(self) -> float:
        return float(np.max(np.linalg.eigvals(self.a).real))

    def observation_row(self, name: str) -> np.ndarray:
        """Row ``c`` such that the small-signal quantity ``name`` equals ``c @ X``."""
        if name in self.observables:
            return self.observables[name]
        row = np.zeros(self.n)
        if name in self.alg_names:
            k = self.alg_names.index(name)
            row[: self.e.shape[1]] = self.e[k]
            return row
        if name in self.state_names:
            row[self.state_names.index(name)] = 1.0
            return row
        raise ConfigError(f"unknown measurement {name!r}")

    def has(self, name: str) -> bool:
        return name in self.observables or name in self.alg_names or name in self.state_names


def _fd_step(x):
    return FD_REL_STEP * np.maximum(1.0, np.abs(x))


def jacobians(model: DynamicModel, xi=None, zeta=None) -> Jacobians:
    """Central finite-difference Jacobians of ``F`` and ``G`` at ``(xi, zeta)``."""
    xi = model.xi0 if xi is None else np.asarray(xi, float)
    zeta = model.zeta0 if zeta is None else np.asarray(zeta, float)
    nx, nz = xi.size, zeta.size

    def both(x, z):
        f = model.f_tilde(x, z)
        g = model.g(x, z)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericalError("NaN/inf in residual evaluation near "
                                 f"xi={np.array2string(x, precision=4)}, "
                                 f"zeta={np.array2string(z, precision=4)}")
        return f, g

    f_xi = np.zeros((nx, nx))
    g_xi = np.zeros((nz, nx))
    hx = _fd_step(xi)
    for k in range(nx):
        xp, xm = xi.copy(), xi.copy()
        xp[k] += hx[k]
        xm[k] -= hx[k]
        (fp, gp), (fm, gm) = both(xp, zeta), both(xm, zeta)
        f_xi[:, k] = (fp - fm) / (2 * hx[k])
        g_xi[:, k] = (gp - gm) / (2 * hx[k])
    f_z = np.zeros((nx, nz))
    g_z = np.zeros((nz, nz))
    hz = _fd_step(zeta)
    for k in range(nz):
        zp, zm = zeta.copy(), zeta.copy()
        zp[k] += hz[k]
        zm[k] -= hz[k]
        (fp, gp), (fm, gm) = both(xi, zp), both(xi, zm)
        f_z[:, k] = (fp - fm) / (2 * hz[k])
        g_z[:, k] = (gp - gm) / (2 * hz[k])
    return Jacobians(f_xi, f_z, g_xi, g_z)


def _factor_g_zeta(model, g_zeta):
    lu, piv = scipy.linalg.lu_factor(g_zeta, check_finite=True)
    d = np.abs(np.diag(lu))
    scale = max(np.max(np.abs(g_zeta)), 1.0)
    if np.min(d) <= 1e-13 * scale:
        k = int(np.argmin(d))
        # undo the row interchanges to find the original equation at the small pivot
        perm = np.arange(g_zeta.shape[0])
        for i, p in enumerate(piv):
            perm[i], perm[p] = perm[p], perm[i]
        eq = equation_names(model)[perm[k]]
        raise SingularJacobianError(f"G_zeta is singular; deficient algebraic equation: {eq}")
    return lu, piv


def equation_names(model: DynamicModel) -> list[str]:
    """Human-readable labels of the algebraic equations (rows of ``G``)."""
    arr = model.arrays
    names = [""] * model.n_alg
    bus_ids = model.net.bus_ids
    for i, b in enumerate(bus_ids):
        if i == arr.slack and arr.ref < 0:
            names[arr.th_idx[i] - arr.n_x] = f"angle reference at {b}"
            names[arr.v_idx[i] - arr.n_x] = f"voltage reference at {b}"
        else:
            names[arr.th_idx[i] - arr.n_x] = f"active power balance at {b}"
            names[arr.v_idx[i] - arr.n_x] = f"reactive power balance at {b}"
    for k, n in enumerate(model.alg_names):
        if not names[k]:
            names[k] = f"definition of {n}"
    return names


def assemble_abe(model: DynamicModel, jac: Jacobians | None = None,
                 check_stability: bool = True) -> LinearizedSystem:
    """Drift, diffusion and algebraic sensitivity of the linearized noisy model."""
    jac = jacobians(model) if jac is None else jac
    lam = model.lambda_diag
    nx, nz_ = model.n_states, model.n_noise
    lu = _factor_g_zeta(model, jac.g_zeta)
    gx = scipy.linalg.lu_solve(lu, jac.g_xi) if nx else np.zeros((model.n_alg, 0))
    gn = scipy.linalg.lu_solve(lu, model.xi_inject) if nz_ else np.zeros((model.n_alg, 0))
    f_red = jac.f_xi - jac.f_zeta @ gx
    j = f_red / lam[:, None] if nx else np.zeros((0, 0))
    upsilon = np.array([o.upsilon for o in model.ou])
    sigma = np.array([o.sigma for o in model.ou])
    a = np.zeros((nx + nz_, nx + nz_))
    a[:nx, :nx] = j
    a[:nx, nx:] = -(jac.f_zeta @ gn) / lam[:, None]
    a[nx:, nx:] = np.diag(-upsilon)
    b = np.zeros((nx + nz_, nz_))
    b[nx:, :] = np.diag(sigma)
    e = -np.hstack([gx, gn])

    values, rows = {}, {}
    sidx = model.state_index
    for name, (_, dev_id) in model.params.items():
        if f"omega_{dev_id}" in sidx:
            values[name] = model.parameter_value(name)
            rows[name] = sidx[f"omega_{dev_id}"]
    sys = LinearizedSystem(
        a=a, b=b, e=e, j=j,
        state_names=list(model.state_names) + list(model.noise_names),
        alg_names=list(model.alg_names),
        equilibrium=(model.xi0.copy(), model.zeta0.copy()),
        lambda_diag=lam.copy(), param_values=values, param_rows=rows, n_base=nx + nz_,
    )
    if check_stability:
        check_stable(sys)
    return sys


def linearize(model: DynamicModel, check_stability: bool = True) -> LinearizedSystem:
    return assemble_abe(model, jacobians(model), check_stability=check_stability)


def check_stable(sys: LinearizedSystem) -> None:
    ev = np.linalg.eigvals(sys.a)
    bad = ev[ev.real >= 0]
    if bad.size:
        raise StabilityError(
            "linearized system is not asymptotically stable; offending eigenvalues: "
            + ", ".join(f"{z:.4g}" for z in bad), eigenvalues=bad)


def update_lambda(sys: LinearizedSystem, params: dict[str, float]) -> LinearizedSystem:
    """Fast path for new inertia (row rescaling) or damping (diagonal shift) values."""
    a = sys.a.copy()
    lam = sys.lambda_diag.copy()
    values = dict(sys.param_values)
    for name, new in params.items():
        if name not in sys.param_rows:
            raise ConfigError(f"unknown parameter {name!r}")
        new = float(new)
        r = sys.param_rows[name]
        if name.startswith("H_"):
            if not new > 0:
                raise ConfigError(f"{name} must be > 0, got {new}")
            a[r, :sys.n_base] *= values[name] / new
            lam[r] = 2.0 * new
        else:
            if new < 0:
                raise ConfigError(f"{name} must be >= 0, got {new}")
            a[r, r] -= (new - values[name]) / lam[r]
        values[name] = new
    nx = sys.j.shape[0]
    return dataclasses.replace(sys, a=a, j=a[:nx, :nx].copy(), lambda_diag=lam,
                               param_values=values)


def dump_matrices(sys: LinearizedSystem, path) -> None:
    """Write ``a``, ``b`` and ``e`` row-major with a header carrying the index maps."""
    with open(path, "w") as fh:
        fh.write("# linearized system dump, row-major\n")
        fh.write("# states: " + " ".join(sys.state_names) + "\n")
        fh.write("# algebraic: " + " ".join(sys.alg_names) + "\n")
        for label, m in (("a", sys.a), ("b", sys.b), ("e", sys.e)):
            fh.write(f"# {label} {m.shape[0]} {m.shape[1]}\n")
            for row in m:
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_matrices(path) -> dict[str, np.ndarray]:
    out, header = {}, {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("# states:") or line.startswith("# algebraic:"):
            key, _, rest = line[2:].partition(":")
            header[key] = rest.split()
            i += 1
        elif line.startswith("# ") and len(line.split()) == 4 and line.split()[1] in "abe":
            _, label, r, c = line.split()
            r, c = int(r), int(c)
            rows = [np.array(lines[i + 1 + k].split(), dtype=float) for k in range(r)]
            out[label] = np.array(rows).reshape(r, c)
            i += 1 + r
        else:
            i += 1
    out.update(header)
    return out
