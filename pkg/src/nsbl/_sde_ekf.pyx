# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Euler-Maruyama integration of the coupled
pitch/aerodynamic-moment state and the extended Kalman filter
log-likelihood over a pitch observation series.

Semantics match ``nsbl._sde_ekf_py`` exactly; ``nsbl.backend`` picks
whichever implementation imports.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport NAN, fabs, isfinite, log, tanh

cnp.import_array()

# coefficient vector layout (see nsbl.aero.pack_coeffs):
# 0..5  c1..c6   structural coefficients
# 6     B        aerodynamic time-constant coefficient
# 7..12 e1..e6   aerodynamic polynomial coefficients
# 13    sigma    process-noise strength on the moment coefficient
# 14    eps      smoothing width of the sign() replacement

cdef double STATE_LIMIT = 1.0e3
cdef double LOG_2PI = 1.8378770664093453


cdef inline void _drift(const double* c, double th, double thd, double cm,
                        double* f) noexcept nogil:
    cdef double t = tanh(thd / c[14])
    cdef double th2 = th * th
    cdef double th3 = th2 * th
    cdef double f2 = c[0] * t + c[1] * th + c[2] * cm + c[3] * thd + c[4] * th3
    cdef double poly = (c[7] * th + c[8] * thd + c[9] * th3
                        + c[10] * th2 * thd + c[11] * th2 * th3
                        + c[12] * th2 * th2 * thd)
    f[0] = thd
    f[1] = f2
    f[2] = c[6] * (poly - cm) + c[5] * f2


cdef inline void _jacobian(const double* c, double th, double thd,
                           double* j) noexcept nogil:
    # rows: d(theta_dot, f2, f3) / d(theta, theta_dot, cm); row-major 3x3
    cdef double t = tanh(thd / c[14])
    cdef double th2 = th * th
    cdef double th3 = th2 * th
    cdef double th4 = th2 * th2
    cdef double j21 = c[1] + 3.0 * c[4] * th2
    cdef double j22 = c[3] + c[0] * (1.0 - t * t) / c[14]
    cdef double j23 = c[2]
    j[0] = 0.0
    j[1] = 1.0
    j[2] = 0.0
    j[3] = j21
    j[4] = j22
    j[5] = j23
    j[6] = c[6] * (c[7] + 3.0 * c[9] * th2 + 2.0 * c[10] * th * thd
                   + 5.0 * c[11] * th4 + 4.0 * c[12] * th3 * thd) + c[5] * j21
    j[7] = c[6] * (c[8] + c[10] * th2 + c[12] * th4) + c[5] * j22
    j[8] = -c[6] + c[5] * j23


cdef Py_ssize_t _sde_core(const double* c, double* x0, Py_ssize_t n_steps,
                          double dtau, const double* noise,
                          double* out) noexcept nogil:
    cdef double th = x0[0], thd = x0[1], cm = x0[2]
    cdef double f[3]
    cdef Py_ssize_t i
    out[0] = th
    out[1] = thd
    out[2] = cm
    for i in range(n_steps):
        _drift(c, th, thd, cm, f)
        th = th + f[0] * dtau
        thd = thd + f[1] * dtau
        cm = cm + f[2] * dtau + noise[i]
        out[3 * (i + 1)] = th
        out[3 * (i + 1) + 1] = thd
        out[3 * (i + 1) + 2] = cm
        if (fabs(th) > STATE_LIMIT or fabs(thd) > STATE_LIMIT
                or fabs(cm) > STATE_LIMIT or not isfinite(th)):
            return i
    return -1


def sde_path(double[::1] coeffs, double[::1] x0, Py_ssize_t n_steps,
             double dtau, double[::1] noise, double[:, ::1] out):
    """Integrate the state forward; returns -1 or the diverging step."""
    cdef double start[3]
    start[0] = x0[0]
    start[1] = x0[1]
    start[2] = x0[2]
    cdef Py_ssize_t bad
    with nogil:
        bad = _sde_core(&coeffs[0], start, n_steps, dtau, &noise[0],
                        &out[0, 0])
    return bad


cdef double _ekf_core(const double* c, const double* y,
                      const long long* steps, Py_ssize_t n_obs, double dtau,
                      double meas_var, const double* x0,
                      const double* p0_diag) noexcept nogil:
    cdef double x[3]
    cdef double p[9]
    cdef double f[3]
    cdef double jac[9]
    cdef double fp[9]
    cdef double n0, n1, n2, n4, n5, n8
    cdef double k0, k1, k2, s, innov, ll, q
    cdef double b00, b10, b20
    cdef Py_ssize_t i, r
    cdef long long m

    q = c[13] * c[13] * dtau
    x[0] = x0[0]
    x[1] = x0[1]
    x[2] = x0[2]
    for r in range(9):
        p[r] = 0.0
    p[0] = p0_diag[0]
    p[4] = p0_diag[1]
    p[8] = p0_diag[2]
    ll = 0.0
    for i in range(n_obs):
        for m in range(steps[i]):
            _drift(c, x[0], x[1], x[2], f)
            _jacobian(c, x[0], x[1], jac)
            x[0] = x[0] + f[0] * dtau
            x[1] = x[1] + f[1] * dtau
            x[2] = x[2] + f[2] * dtau
            # transition matrix F = I + J*dtau, stored in jac
            for r in range(9):
                jac[r] = jac[r] * dtau
            jac[0] += 1.0
            jac[4] += 1.0
            jac[8] += 1.0
            # fp = F @ P
            fp[0] = jac[0]*p[0] + jac[1]*p[3] + jac[2]*p[6]
            fp[1] = jac[0]*p[1] + jac[1]*p[4] + jac[2]*p[7]
            fp[2] = jac[0]*p[2] + jac[1]*p[5] + jac[2]*p[8]
            fp[3] = jac[3]*p[0] + jac[4]*p[3] + jac[5]*p[6]
            fp[4] = jac[3]*p[1] + jac[4]*p[4] + jac[5]*p[7]
            fp[5] = jac[3]*p[2] + jac[4]*p[5] + jac[5]*p[8]
            fp[6] = jac[6]*p[0] + jac[7]*p[3] + jac[8]*p[6]
            fp[7] = jac[6]*p[1] + jac[7]*p[4] + jac[8]*p[7]
            fp[8] = jac[6]*p[2] + jac[7]*p[5] + jac[8]*p[8]
            # P = fp @ F^T + Q
            p[0] = fp[0]*jac[0] + fp[1]*jac[1] + fp[2]*jac[2]
            p[1] = fp[0]*jac[3] + fp[1]*jac[4] + fp[2]*jac[5]
            p[2] = fp[0]*jac[6] + fp[1]*jac[7] + fp[2]*jac[8]
            p[3] = p[1]
            p[4] = fp[3]*jac[3] + fp[4]*jac[4] + fp[5]*jac[5]
            p[5] = fp[3]*jac[6] + fp[4]*jac[7] + fp[5]*jac[8]
            p[6] = p[2]
            p[7] = p[5]
            p[8] = fp[6]*jac[6] + fp[7]*jac[7] + fp[8]*jac[8] + q
        s = p[0] + meas_var
        if not isfinite(s) or s <= 0.0:
            return NAN
        innov = y[i] - x[0]
        ll += -0.5 * (LOG_2PI + log(s) + innov * innov / s)
        k0 = p[0] / s
        k1 = p[3] / s
        k2 = p[6] / s
        x[0] += k0 * innov
        x[1] += k1 * innov
        x[2] += k2 * innov
        # Joseph update: P = (I-KH) P (I-KH)^T + R K K^T, H = [1,0,0]
        b00 = 1.0 - k0
        b10 = -k1
        b20 = -k2
        n0 = b00*p[0]*b00 + meas_var*k0*k0
        n1 = b00*(p[0]*b10 + p[1]) + meas_var*k0*k1
        n2 = b00*(p[0]*b20 + p[2]) + meas_var*k0*k2
        n4 = (b10*p[0] + p[3])*b10 + b10*p[1] + p[4] + meas_var*k1*k1
        n5 = (b10*p[0] + p[3])*b20 + b10*p[2] + p[5] + meas_var*k1*k2
        n8 = (b20*p[0] + p[6])*b20 + b20*p[2] + p[8] + meas_var*k2*k2
        p[0] = n0
        p[1] = n1
        p[3] = n1
        p[2] = n2
        p[6] = n2
        p[4] = n4
        p[5] = n5
        p[7] = n5
        p[8] = n8
    if not isfinite(ll):
        return NAN
    return ll


def ekf_loglik(double[::1] coeffs, double[::1] y, long long[::1] steps,
               double dtau, double meas_var, double[::1] x0,
               double[::1] p0_diag):
    """Prediction-error log likelihood; NaN signals a numerical failure."""
    cdef Py_ssize_t n_obs = y.shape[0]
    if n_obs == 0:
        return 0.0
    cdef double ll
    with nogil:
        ll = _ekf_core(&coeffs[0], &y[0], &steps[0], n_obs, dtau, meas_var,
                       &x0[0], &p0_diag[0])
    return ll
