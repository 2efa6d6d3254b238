"""Reference (pure NumPy) implementation of the integrator inner loop.

One step from ``z_n`` (packed ``[xi, zeta_core]``) to ``z_{n+1}``:

1. the load noise is advanced by its exact OU transition
   ``eta' = a eta + s n`` with ``a = exp(-upsilon h)``;
2. the trapezoidal equations

       Lambda (xi' - xi) - h/2 (F(z') + F(z)) = 0
       G(z', eta') = 0

   are solved by a chord Newton iteration whose matrix
   ``[[Lambda - h/2 F_z], [G_z]]`` was factored once by the caller.

The compiled kernel performs exactly the same operations.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .model import ModelArrays, core_residual, output_values


class StepKernel:
    def __init__(self, arr: ModelArrays, lam, lu, piv, h, ou_a, ou_s,
                 tol=1e-10, max_iter=8):
        self.arr = arr
        self.n_x = arr.n_x
        self.n = arr.n_x + arr.n_core
        self.h = float(h)
        self.lam = np.asarray(lam, dtype=float)
        self.lu = (np.asarray(lu, dtype=float), np.asarray(piv))
        self.ou_a = np.asarray(ou_a, dtype=float)
        self.ou_s = np.asarray(ou_s, dtype=float)
        self.tol = tol
        self.max_iter = max_iter

    def step(self, z, eta) -> int:
        nx = self.n_x
        z0 = z.copy()
        r = core_residual(self.arr, z, eta)
        f0 = r[:nx].copy()
        for it in range(self.max_iter + 1):
            if it > 0:
                r = core_residual(self.arr, z, eta)
            r[:nx] = self.lam * (z[:nx] - z0[:nx]) - 0.5 * self.h * (r[:nx] + f0)
            err = np.max(np.abs(r))
            if err <= self.tol:
                return 0
            if it == self.max_iter or not np.isfinite(err):
                break
            z -= scipy.linalg.lu_solve(self.lu, r, check_finite=False)
        z[:] = z0
        return 1

    def run(self, z, eta, normals, step0, sample_every, sel, out, out_pos, need_outputs):
        for i in range(normals.shape[0]):
            prev = eta.copy()
            eta[:] = self.ou_a * eta + self.ou_s * normals[i]
            if self.step(z, eta) != 0:
                eta[:] = prev
                return i, out_pos, 1
            if (step0 + i + 1) % sample_every == 0:
                y = self.eval_outputs(z) if need_outputs else z
                out[out_pos] = y[sel]
                out_pos += 1
        return normals.shape[0], out_pos, 0

    def eval_residual(self, z, eta):
        return core_residual(self.arr, np.asarray(z, float), np.asarray(eta, float))

    def eval_outputs(self, z):
        z = np.asarray(z, float)
        return np.concatenate([z, output_values(self.arr, z)])
