"""Independent reference implementations used only by the test suite.

Everything here is coded straight from the underlying formulas, on purpose
without importing the package's own building blocks, so agreement between the
two is meaningful.
"""

import numpy as np


def rel_err(got, want, floor=1e-300):
    """Max relative error, normalized by the largest reference magnitude."""
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    scale = max(np.abs(want).max(), floor)
    return np.abs(got - want).max() / scale


def fd_gradient(f, x, h=1e-6):
    """Central-difference gradient of the scalar callable `f` w.r.t. array `x`.

    `x` is mutated in place around each evaluation so the callable can simply
    close over the array (e.g. a graph leaf's `.value`).
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = float(f())
        flat[i] = saved - h
        fm = float(f())
        flat[i] = saved
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _deviator(eps):
    """eps: array (..., 4) with components (xx, yy, zz, xy)."""
    mean = (eps[..., 0] + eps[..., 1] + eps[..., 2]) / 3.0
    dev = eps.copy()
    dev[..., 0] -= mean
    dev[..., 1] -= mean
    dev[..., 2] -= mean
    return dev


def _double_dot(t):
    return t[..., 0] ** 2 + t[..., 1] ** 2 + t[..., 2] ** 2 + 2.0 * t[..., 3] ** 2


def return_map_ebar_p(mu, sigma_y0, hp, strain_path):
    """Incremental radial-return J2 plasticity with linear hardening.

    `strain_path` is an iterable of total-strain arrays (4,) in
    (xx, yy, zz, xy) order, visiting the load path step by step. Returns the
    final equivalent plastic strain. With linear hardening each step is exact
    (the consistency equation is linear in the plastic multiplier), so under
    proportional monotonic loading the result is path-step independent.
    """
    ep = np.zeros(4)
    ebar_p = 0.0
    for eps in strain_path:
        e = _deviator(np.asarray(eps, dtype=float))
        s_trial = 2.0 * mu * (e - ep)
        q_trial = np.sqrt(1.5 * _double_dot(s_trial))
        f = q_trial - (sigma_y0 + hp * ebar_p)
        if f > 0.0:
            dgamma = f / (3.0 * mu + hp)
            n = 1.5 * s_trial / q_trial
            ep = ep + dgamma * n
            ebar_p += dgamma
    return ebar_p
