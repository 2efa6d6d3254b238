# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop of the stochastic DAE integrator.

Mirrors :mod:`ambient_inertia._kernel_py` step for step; see that module for
the algorithm description.
"""
import numpy as np

from libc.math cimport cos, sin, sqrt, fabs, pow
from scipy.linalg.cython_lapack cimport dgetrs


cdef class StepKernel:
    # model arrays
    cdef double Om
    cdef Py_ssize_t nbus, n_x, n_core, n, slack, ref, n_sw, n_gf, n_ld, n_out, n_noise
    cdef double v_slack, th_slack
    cdef double[:, ::1] Yr, Yi, Cr, Ci
    cdef double[::1] fixed_p, fixed_q
    cdef long[::1] v_idx, th_idx
    cdef long[::1] sw_bus, sw_w, sw_d, sw_pm, sw_e
    cdef double[::1] sw_D, sw_x, sw_ratio, sw_omega0, sw_pm_const, sw_e_const
    cdef double[::1] sw_kg, sw_pref, sw_ka, sw_vref, sw_e0, sw_d_const
    cdef long[::1] gf_bus, gf_s, gf_p
    cdef double[::1] gf_droop, gf_tf, gf_pset, gf_qset
    cdef long[::1] ld_bus, ld_ou_p, ld_ou_q
    cdef double[::1] ld_p, ld_q, ld_v0, ld_gamma
    cdef long[::1] out_gf_row, out_gf_dev
    # integrator data
    cdef double h
    cdef double[::1] lam
    cdef double[::1, :] lu
    cdef int[::1] ipiv
    cdef double[::1] ou_a, ou_s
    cdef double tol
    cdef int max_iter
    # scratch
    cdef double[::1] P, Q, Vr, Vi, r, f0, z0, eta_new, Wr, Wi, y

    def __init__(self, arr, lam, lu, piv, double h, ou_a, ou_s,
                 double tol=1e-10, int max_iter=8):
        self.Om = arr.omega_base
        self.nbus = arr.nbus
        self.n_x = arr.n_x
        self.n_core = arr.n_core
        self.n = arr.n_x + arr.n_core
        self.slack = arr.slack
        self.ref = arr.ref
        self.v_slack = arr.v_slack
        self.th_slack = arr.th_slack
        self.Yr = np.ascontiguousarray(arr.Yr, dtype=np.float64)
        self.Yi = np.ascontiguousarray(arr.Yi, dtype=np.float64)
        self.Cr = np.ascontiguousarray(arr.out_Cr, dtype=np.float64)
        self.Ci = np.ascontiguousarray(arr.out_Ci, dtype=np.float64)
        self.fixed_p = _f(arr.fixed_p)
        self.fixed_q = _f(arr.fixed_q)
        self.v_idx = _l(arr.v_idx)
        self.th_idx = _l(arr.th_idx)
        self.sw_bus = _l(arr.sw_bus)
        self.sw_w = _l(arr.sw_w)
        self.sw_d = _l(arr.sw_d)
        self.sw_pm = _l(arr.sw_pm)
        self.sw_e = _l(arr.sw_e)
        self.sw_D = _f(arr.sw_D)
        self.sw_x = _f(arr.sw_x)
        self.sw_ratio = _f(arr.sw_ratio)
        self.sw_omega0 = _f(arr.sw_omega0)
        self.sw_pm_const = _f(arr.sw_pm_const)
        self.sw_e_const = _f(arr.sw_e_const)
        self.sw_kg = _f(arr.sw_kg)
        self.sw_pref = _f(arr.sw_pref)
        self.sw_ka = _f(arr.sw_ka)
        self.sw_vref = _f(arr.sw_vref)
        self.sw_e0 = _f(arr.sw_e0)
        self.sw_d_const = _f(arr.sw_d_const)
        self.gf_bus = _l(arr.gf_bus)
        self.gf_s = _l(arr.gf_s)
        self.gf_p = _l(arr.gf_p)
        self.gf_droop = _f(arr.gf_droop)
        self.gf_tf = _f(arr.gf_tf)
        self.gf_pset = _f(arr.gf_pset)
        self.gf_qset = _f(arr.gf_qset)
        self.ld_bus = _l(arr.ld_bus)
        self.ld_ou_p = _l(arr.ld_ou_p)
        self.ld_ou_q = _l(arr.ld_ou_q)
        self.ld_p = _f(arr.ld_p)
        self.ld_q = _f(arr.ld_q)
        self.ld_v0 = _f(arr.ld_v0)
        self.ld_gamma = _f(arr.ld_gamma)
        self.out_gf_row = _l(arr.out_gf_row)
        self.out_gf_dev = _l(arr.out_gf_dev)
        self.n_sw = self.sw_bus.shape[0]
        self.n_gf = self.gf_bus.shape[0]
        self.n_ld = self.ld_bus.shape[0]
        self.n_out = self.Cr.shape[0]
        self.h = h
        self.lam = _f(lam)
        self.lu = np.asfortranarray(lu, dtype=np.float64)
        self.ipiv = (np.asarray(piv, dtype=np.int32) + 1).astype(np.int32)
        self.ou_a = _f(ou_a)
        self.ou_s = _f(ou_s)
        self.n_noise = self.ou_a.shape[0]
        self.tol = tol
        self.max_iter = max_iter
        self.P = np.zeros(self.nbus)
        self.Q = np.zeros(self.nbus)
        self.Vr = np.zeros(self.nbus)
        self.Vi = np.zeros(self.nbus)
        self.r = np.zeros(self.n)
        self.f0 = np.zeros(max(self.n_x, 1))
        self.z0 = np.zeros(self.n)
        self.eta_new = np.zeros(max(self.n_noise, 1))
        self.Wr = np.zeros(self.nbus + self.n_sw)
        self.Wi = np.zeros(self.nbus + self.n_sw)
        self.y = np.zeros(self.n + self.n_out)

    cdef void residual(self, double[::1] z, double[::1] eta, double[::1] r) noexcept nogil:
        cdef Py_ssize_t i, j, k, b, nb = self.nbus
        cdef double v, th, ir, ii, E, pm, ang, pe, qe, dw, p, fac, ep, eq, vb, d
        cdef double dw_ref = 0.0
        if self.ref >= 0:
            dw_ref = z[self.sw_w[self.ref]] - self.sw_omega0[self.ref]
        for i in range(nb):
            v = z[self.v_idx[i]]
            th = z[self.th_idx[i]]
            self.Vr[i] = v * cos(th)
            self.Vi[i] = v * sin(th)
        for i in range(nb):
            ir = 0.0
            ii = 0.0
            for j in range(nb):
                ir = ir + self.Yr[i, j] * self.Vr[j] - self.Yi[i, j] * self.Vi[j]
                ii = ii + self.Yr[i, j] * self.Vi[j] + self.Yi[i, j] * self.Vr[j]
            self.P[i] = self.fixed_p[i] - (self.Vr[i] * ir + self.Vi[i] * ii)
            self.Q[i] = self.fixed_q[i] - (self.Vi[i] * ir - self.Vr[i] * ii)
        for k in range(self.n_sw):
            b = self.sw_bus[k]
            vb = z[self.v_idx[b]]
            if self.sw_e[k] >= 0:
                E = z[self.sw_e[k]]
            else:
                E = self.sw_e_const[k]
            if self.sw_pm[k] >= 0:
                pm = z[self.sw_pm[k]]
            else:
                pm = self.sw_pm_const[k]
            d = z[self.sw_d[k]] if self.sw_d[k] >= 0 else self.sw_d_const[k]
            ang = d - z[self.th_idx[b]]
            pe = E * vb * sin(ang) / self.sw_x[k]
            qe = (E * vb * cos(ang) - vb * vb) / self.sw_x[k]
            self.P[b] += pe
            self.Q[b] += qe
            dw = z[self.sw_w[k]] - self.sw_omega0[k]
            r[self.sw_w[k]] = pm - pe / self.sw_ratio[k] - self.sw_D[k] * dw
            if self.sw_d[k] >= 0:
                r[self.sw_d[k]] = self.Om * (dw - dw_ref)
            if self.sw_pm[k] >= 0:
                r[self.sw_pm[k]] = self.sw_pref[k] - self.sw_kg[k] * dw - pm
            if self.sw_e[k] >= 0:
                r[self.sw_e[k]] = self.sw_e0[k] + self.sw_ka[k] * (self.sw_vref[k] - vb) - E
        for k in range(self.n_gf):
            b = self.gf_bus[k]
            p = z[self.gf_p[k]]
            self.P[b] += p
            self.Q[b] += self.gf_qset[k]
            r[self.gf_s[k]] = self.gf_pset[k] - p - self.gf_droop[k] * dw_ref
            r[self.gf_p[k]] = p - (z[self.gf_s[k]] - self.gf_droop[k] * z[self.th_idx[b]] / self.Om) / self.gf_tf[k]
        for k in range(self.n_ld):
            b = self.ld_bus[k]
            if self.ld_gamma[k] == 0.0:
                fac = 1.0
            else:
                fac = pow(z[self.v_idx[b]] / self.ld_v0[k], self.ld_gamma[k])
            ep = eta[self.ld_ou_p[k]] if self.ld_ou_p[k] >= 0 else 0.0
            eq = eta[self.ld_ou_q[k]] if self.ld_ou_q[k] >= 0 else 0.0
            self.P[b] -= (1.0 + ep) * self.ld_p[k] * fac
            self.Q[b] -= (1.0 + eq) * self.ld_q[k] * fac
        for i in range(nb):
            r[self.th_idx[i]] = self.P[i]
            r[self.v_idx[i]] = self.Q[i]
        if self.ref < 0:
            r[self.th_idx[self.slack]] = z[self.th_idx[self.slack]] - self.th_slack
            r[self.v_idx[self.slack]] = z[self.v_idx[self.slack]] - self.v_slack

    cdef void outputs(self, double[::1] z, double[::1] y) noexcept nogil:
        # y[:n] = z, y[n:] = |C W| (grid-following rows replaced by |S|/v)
        cdef Py_ssize_t i, k, m, nb = self.nbus, nw = self.nbus + self.n_sw
        cdef double E, d, ar, ai, v, th, p
        for i in range(self.n):
            y[i] = z[i]
        for i in range(nb):
            v = z[self.v_idx[i]]
            th = z[self.th_idx[i]]
            self.Wr[i] = v * cos(th)
            self.Wi[i] = v * sin(th)
        for k in range(self.n_sw):
            E = z[self.sw_e[k]] if self.sw_e[k] >= 0 else self.sw_e_const[k]
            d = z[self.sw_d[k]] if self.sw_d[k] >= 0 else self.sw_d_const[k]
            self.Wr[nb + k] = E * cos(d)
            self.Wi[nb + k] = E * sin(d)
        for m in range(self.n_out):
            ar = 0.0
            ai = 0.0
            for i in range(nw):
                ar = ar + self.Cr[m, i] * self.Wr[i] - self.Ci[m, i] * self.Wi[i]
                ai = ai + self.Cr[m, i] * self.Wi[i] + self.Ci[m, i] * self.Wr[i]
            y[self.n + m] = sqrt(ar * ar + ai * ai)
        for k in range(self.out_gf_row.shape[0]):
            m = self.out_gf_dev[k]
            p = z[self.gf_p[m]]
            y[self.n + self.out_gf_row[k]] = sqrt(p * p + self.gf_qset[m] * self.gf_qset[m]) / z[self.v_idx[self.gf_bus[m]]]

    cdef int step(self, double[::1] z, double[::1] eta) noexcept nogil:
        """One trapezoidal step from ``z`` (overwritten) with the algebraic part
        evaluated at the already advanced noise ``eta``. Returns 0 on success."""
        cdef Py_ssize_t k, it
        cdef int n = <int> self.n, one = 1, info = 0
        cdef double err, hh = 0.5 * self.h
        cdef char trans = b'N'
        for k in range(self.n):
            self.z0[k] = z[k]
        self.residual(z, eta, self.r)
        for k in range(self.n_x):
            self.f0[k] = self.r[k]
        for it in range(self.max_iter + 1):
            if it > 0:
                self.residual(z, eta, self.r)
            err = 0.0
            for k in range(self.n_x):
                self.r[k] = self.lam[k] * (z[k] - self.z0[k]) - hh * (self.r[k] + self.f0[k])
            for k in range(self.n):
                if fabs(self.r[k]) > err:
                    err = fabs(self.r[k])
            if err <= self.tol:
                return 0
            if it == self.max_iter or err != err:
                break
            dgetrs(&trans, &n, &one, &self.lu[0, 0], &n, &self.ipiv[0], &self.r[0], &n, &info)
            for k in range(self.n):
                z[k] -= self.r[k]
        for k in range(self.n):
            z[k] = self.z0[k]
        return 1

    def run(self, double[::1] z, double[::1] eta, double[:, ::1] normals,
            Py_ssize_t step0, Py_ssize_t sample_every, long[::1] sel,
            double[:, ::1] out, Py_ssize_t out_pos, bint need_outputs):
        """Advance up to ``normals.shape[0]`` steps.

        ``eta`` is advanced in place by the exact OU update before each step;
        after every step whose global index ``step0 + i + 1`` is a multiple of
        ``sample_every`` the selected entries of ``[z, outputs]`` are written to
        ``out[out_pos]``. Returns ``(steps_done, out_pos, status)``; on failure
        ``z`` and ``eta`` hold the state before the failing step.
        """
        cdef Py_ssize_t i, k, n_steps = normals.shape[0], ns = sel.shape[0]
        cdef int status = 0
        with nogil:
            for i in range(n_steps):
                for k in range(self.n_noise):
                    self.eta_new[k] = eta[k]
                    eta[k] = self.ou_a[k] * eta[k] + self.ou_s[k] * normals[i, k]
                if self.step(z, eta) != 0:
                    for k in range(self.n_noise):
                        eta[k] = self.eta_new[k]
                    status = 1
                    break
                if (step0 + i + 1) % sample_every == 0:
                    if need_outputs:
                        self.outputs(z, self.y)
                    else:
                        for k in range(self.n):
                            self.y[k] = z[k]
                    for k in range(ns):
                        out[out_pos, k] = self.y[sel[k]]
                    out_pos += 1
        return i if status else n_steps, out_pos, status

    def eval_residual(self, z, eta):
        cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64)
        cdef double[::1] ee = np.ascontiguousarray(eta if len(eta) else np.zeros(1), dtype=np.float64)
        r = np.zeros(self.n)
        self.residual(zz, ee, r)
        return r

    def eval_outputs(self, z):
        cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64)
        y = np.zeros(self.n + self.n_out)
        self.outputs(zz, y)
        return y


cdef _f(x):
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1)


cdef _l(x):
    return np.ascontiguousarray(x, dtype=np.int_).reshape(-1)
