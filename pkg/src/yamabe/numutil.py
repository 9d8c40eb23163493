"""Small numeric helpers: slope fits and Richardson extrapolation."""

from __future__ import annotations

import numpy as np

from .errors import ExtrapolationUnstableError

NOISE_FLOOR = 1e-13


def fit_order(svals, fvals, floor=NOISE_FLOOR):
    """Least-squares slope of log|f| against log|s|.

    ``floor`` may be an array (per-sample noise estimate).  Returns None
    when the residual sits under the noise floor everywhere ("order >=
    cutoff").
    """
    s = np.abs(np.asarray(svals, dtype=float))
    f = np.abs(np.asarray(fvals, dtype=float))
    floor = np.broadcast_to(np.asarray(floor, dtype=float), f.shape)
    if np.all(f < floor):
        return None
    order = np.argsort(-s)
    s, f, floor = s[order], f[order], floor[order]
    # keep the decaying prefix: once |f| stops dropping the samples have
    # hit the round-off plateau and would corrupt the fit
    keep = 1
    while keep < len(f) and f[keep] > floor[keep] and f[keep] < 0.95 * f[keep - 1]:
        keep += 1
    if keep < 2:
        return None
    # fit on the most asymptotic clean samples only
    lo = max(0, keep - 4)
    slope = np.polyfit(np.log(s[lo:keep]), np.log(f[lo:keep]), 1)[0]
    return float(slope)


def fit_order_logcorrected(svals, fvals, floor=NOISE_FLOOR):
    """Slope fit allowing a log-linear prefactor:
    log|f| ~ a + k log s + b log|log s|; returns k (or None below floor)."""
    s = np.abs(np.asarray(svals, dtype=float))
    f = np.abs(np.asarray(fvals, dtype=float))
    floor = np.broadcast_to(np.asarray(floor, dtype=float), f.shape)
    if np.all(f < floor):
        return None
    mask = (f > floor) & (s > 0) & (s < 1)
    if mask.sum() < 3:
        return fit_order(svals, fvals, floor)
    ls = np.log(s[mask])
    design = np.column_stack([np.ones(mask.sum()), ls, np.log(-ls)])
    sol, *_ = np.linalg.lstsq(design, np.log(f[mask]), rcond=None)
    return float(sol[1])


def neville_to_zero(ts, vs, stability_tol=None):
    """Polynomial extrapolation of samples (t_i, v_i) to t = 0.

    Returns (value, error_estimate); raises when the last two tableau
    columns disagree beyond ``stability_tol`` (relative)."""
    t = np.asarray(ts, dtype=float)
    v = np.asarray(vs, dtype=float).copy()
    n = len(t)
    diag = [v[0]]
    for k in range(1, n):
        for i in range(n - k):
            v[i] = v[i + 1] + (v[i] - v[i + 1]) * (0.0 - t[i + k]) / (t[i] - t[i + k])
        diag.append(v[0])
    err = abs(diag[-1] - diag[-2]) if n > 1 else abs(diag[0])
    val = float(diag[-1])
    if stability_tol is not None:
        scale = max(abs(val), 1e-30)
        if err > stability_tol * max(1.0, scale):
            raise ExtrapolationUnstableError(
                f"extrapolants differ by {err:.3e} (value {val:.6e})")
    return val, float(err)


def gauss_legendre(lo, hi, n):
    """Nodes and weights on [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def periodic_trapezoid(lo, hi, n):
    """Equal-weight nodes for a periodic smooth integrand."""
    h = (hi - lo) / n
    return lo + h * np.arange(n), np.full(n, h)
