"""Numba-compiled inner loops for the classical integrator."""

import numpy as np
from numba import njit

_CBRT2 = 2.0 ** (1.0 / 3.0)
_W1 = 1.0 / (2.0 - _CBRT2)
_W0 = 1.0 - 2.0 * _W1


@njit(cache=True)
def yoshida4_ensemble(x, px, y, py, t0, h, nsteps, mu, f0, om1, om2):
    """Advance the driven two-oscillator ensemble in place; returns final t.

    Fourth-order Yoshida composition of kick-drift-kick leapfrog; time is
    advanced by the drifts, the (time-dependent) kicks act at frozen t.
    """
    m = x.size
    k_edge = 0.5 * _W1 * h
    k_mid = 0.5 * (_W1 + _W0) * h
    d1 = _W1 * h
    d0 = _W0 * h
    t = t0
    for _ in range(nsteps):
        drive = f0 * (np.cos(om1 * t) + np.cos(om2 * t))
        for j in range(m):
            px[j] += k_edge * (-x[j] ** 3 + mu * y[j] + drive)
            py[j] += k_edge * (-y[j] ** 3 + mu * x[j])
        for j in range(m):
            x[j] += d1 * px[j]
            y[j] += d1 * py[j]
        t += d1
        drive = f0 * (np.cos(om1 * t) + np.cos(om2 * t))
        for j in range(m):
            px[j] += k_mid * (-x[j] ** 3 + mu * y[j] + drive)
            py[j] += k_mid * (-y[j] ** 3 + mu * x[j])
        for j in range(m):
            x[j] += d0 * px[j]
            y[j] += d0 * py[j]
        t += d0
        drive = f0 * (np.cos(om1 * t) + np.cos(om2 * t))
        for j in range(m):
            px[j] += k_mid * (-x[j] ** 3 + mu * y[j] + drive)
            py[j] += k_mid * (-y[j] ** 3 + mu * x[j])
        for j in range(m):
            x[j] += d1 * px[j]
            y[j] += d1 * py[j]
        t += d1
        drive = f0 * (np.cos(om1 * t) + np.cos(om2 * t))
        for j in range(m):
            px[j] += k_edge * (-x[j] ** 3 + mu * y[j] + drive)
            py[j] += k_edge * (-y[j] ** 3 + mu * x[j])
    return t
