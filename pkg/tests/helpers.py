"""Shared oracles for the test suite: central finite differences and a
floored relative error."""

import numpy as np


def finite_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(analytic, reference, floor=1e-6):
    """Max absolute deviation over a magnitude floor, so near-zero true
    gradients do not blow up the ratio."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = max(np.abs(reference).max(initial=0.0),
                np.abs(analytic).max(initial=0.0), floor)
    return float(np.abs(analytic - reference).max(initial=0.0) / denom)
