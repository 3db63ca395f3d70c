"""Pure-NumPy reference implementation of the hot state-space kernels.

Functionally identical to the compiled ``nsbl._sde_ekf`` extension (same
coefficient layout, same failure signalling); roughly two orders of
magnitude slower, it exists as the import-time fallback and as the
baseline for the backend benchmark.
"""

import numpy as np

STATE_LIMIT = 1.0e3
LOG_2PI = float(np.log(2.0 * np.pi))


def _drift(c, th, thd, cm):
    t = np.tanh(thd / c[14])
    th2 = th * th
    th3 = th2 * th
    f2 = c[0] * t + c[1] * th + c[2] * cm + c[3] * thd + c[4] * th3
    poly = (c[7] * th + c[8] * thd + c[9] * th3 + c[10] * th2 * thd
            + c[11] * th2 * th3 + c[12] * th2 * th2 * thd)
    return thd, f2, c[6] * (poly - cm) + c[5] * f2


def _jacobian(c, th, thd):
    t = np.tanh(thd / c[14])
    th2 = th * th
    th3 = th2 * th
    th4 = th2 * th2
    j21 = c[1] + 3.0 * c[4] * th2
    j22 = c[3] + c[0] * (1.0 - t * t) / c[14]
    j23 = c[2]
    j31 = c[6] * (c[7] + 3.0 * c[9] * th2 + 2.0 * c[10] * th * thd
                  + 5.0 * c[11] * th4 + 4.0 * c[12] * th3 * thd) + c[5] * j21
    j32 = c[6] * (c[8] + c[10] * th2 + c[12] * th4) + c[5] * j22
    j33 = -c[6] + c[5] * j23
    return np.array([[0.0, 1.0, 0.0], [j21, j22, j23], [j31, j32, j33]])


def sde_path(coeffs, x0, n_steps, dtau, noise, out):
    """Integrate the state forward; returns -1 or the diverging step."""
    c = np.asarray(coeffs, dtype=float)
    th, thd, cm = float(x0[0]), float(x0[1]), float(x0[2])
    out[0, 0] = th
    out[0, 1] = thd
    out[0, 2] = cm
    for i in range(n_steps):
        f0, f1, f2 = _drift(c, th, thd, cm)
        th = th + f0 * dtau
        thd = thd + f1 * dtau
        cm = cm + f2 * dtau + noise[i]
        out[i + 1, 0] = th
        out[i + 1, 1] = thd
        out[i + 1, 2] = cm
        if (abs(th) > STATE_LIMIT or abs(thd) > STATE_LIMIT
                or abs(cm) > STATE_LIMIT or not np.isfinite(th)):
            return i
    return -1


def ekf_loglik(coeffs, y, steps, dtau, meas_var, x0, p0_diag):
    """Prediction-error log likelihood; NaN signals a numerical failure."""
    c = np.asarray(coeffs, dtype=float)
    n_obs = len(y)
    if n_obs == 0:
        return 0.0
    q = c[13] * c[13] * dtau
    x = np.asarray(x0, dtype=float).copy()
    p = np.diag(np.asarray(p0_diag, dtype=float)).copy()
    h = np.array([1.0, 0.0, 0.0])
    ll = 0.0
    eye = np.eye(3)
    for i in range(n_obs):
        for _ in range(int(steps[i])):
            f = np.array(_drift(c, x[0], x[1], x[2]))
            jac = _jacobian(c, x[0], x[1])
            x = x + f * dtau
            fmat = eye + jac * dtau
            p = fmat @ p @ fmat.T
            p[2, 2] += q
            p = 0.5 * (p + p.T)
        s = p[0, 0] + meas_var
        if not np.isfinite(s) or s <= 0.0:
            return np.nan
        innov = y[i] - x[0]
        ll += -0.5 * (LOG_2PI + np.log(s) + innov * innov / s)
        k = p[:, 0] / s
        x = x + k * innov
        ikh = eye - np.outer(k, h)
        p = ikh @ p @ ikh.T + meas_var * np.outer(k, k)
        p = 0.5 * (p + p.T)
    if not np.isfinite(ll):
        return np.nan
    return float(ll)
