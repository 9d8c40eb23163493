"""Defining-density expansion for the singular constant-scalar-curvature
problem.

For a scale ``sigma`` (a defining function read in the fixed metric scale)
set ``rho = -(lap sigma + J sigma)/d``.  The conformally invariant squared
scale is

    S(sigma) = |grad sigma|^2 - (2/d) sigma (lap + J) sigma
             = |grad sigma|^2 + 2 sigma rho,

and ``S = 1`` is the condition that ``sigma^{-2} g`` has constant scalar
curvature ``-d(d-1)``.  Starting from the unit-normalized defining function
the multiplicative recursion

    sigma_k = sigma_{k-1} [1 - (d/2) (S - 1) / ((d-k)(k+1))]

raises the vanishing order of ``S - 1`` by one per step; the step ``k = d``
is impossible (the divisor vanishes) and the residual coefficient

    S(sigma_bar) = 1 + sigma_0^d B

restricted to the zero set is the obstruction density.  Closed-form
improvements and the obstruction in terms of a unit defining function,
its normal operators and J are provided up to fifth order, together with a
one-shot log improvement past the obstructed order.

Every claimed vanishing order is verified empirically by a slope estimator
along declared approach offsets; nothing is assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expr as ex
from . import tensor as tn
from .errors import (
    DimensionError,
    ObstructionOrderError,
    OrderStallError,
    OrderViolationError,
)
from .geometry import MetricData

__all__ = [
    "ScaleDensity", "make_scale", "scale_squared", "unit_normalize",
    "unit_improve", "improve_step", "improve_closed_form", "log_improve",
    "obstruction_closed_form", "numeric_obstruction", "canonical_extensions",
    "vanishing_order", "approach_arrays", "NormalOperatorKit",
    "expansion_pipeline", "taylor_coefficients", "ORDER_CUTOFF",
]

ORDER_CUTOFF = 99.0
SLOPE_TOL = 0.15


# --- scale densities ---------------------------------------------------------

@dataclass
class ScaleDensity:
    """A scale with its rho component and verified vanishing order of S-1."""

    sigma: ex.Expr
    md: MetricData
    rho: ex.Expr
    I2: ex.Expr
    verified_order: float
    provenance: str
    log: list = field(default_factory=list)

    def residual(self):
        return ex.sub(self.I2, ex.ONE)


def scale_squared(md: MetricData, sigma):
    """(S(sigma), rho); the two published routes produce one expression."""
    lap = md.laplacian(sigma)
    J = md.trace_adjusted_scalar()
    d = md.dim
    rho = ex.mul(ex.num(-1, d), ex.add(lap, ex.mul(J, sigma)))
    grad2 = md.norm2_form(md.grad(sigma))
    I2 = ex.add(grad2, ex.mul(2, sigma, rho))
    # the explicit constant-scalar-curvature form, for the record
    I2_direct = ex.sub(grad2, ex.mul(ex.num(2, d), sigma,
                                     ex.add(lap, ex.mul(J, sigma))))
    assert I2 is I2_direct  # identical canonical nodes
    return I2, rho


def make_scale(md, sigma, provenance, points=None, offsets=None,
               s_ref=None, dps=None) -> ScaleDensity:
    I2, rho = scale_squared(md, sigma)
    order = ORDER_CUTOFF
    if points is not None:
        slopes = vanishing_order(md, ex.sub(I2, ex.ONE),
                                 s_ref if s_ref is not None else sigma,
                                 points, offsets, dps=dps)
        order = _min_order(slopes)
    return ScaleDensity(sigma, md, rho, I2, order, provenance)


def _min_order(slopes):
    vals = [s for s in slopes if s is not None]
    if not vals:
        return ORDER_CUTOFF
    return float(min(vals))


# --- approach sampling and order estimation ----------------------------------

def _eval_array(e, cols, size):
    """Vectorized evaluation broadcast to a fixed length (constants allowed)."""
    v = ex.evaluate(e, cols)
    return np.broadcast_to(np.asarray(v, dtype=float), (size,)).copy()


def _eval_pointwise(e, cols, size, dps):
    """Sample-by-sample high-precision evaluation of an array binding."""
    out = np.empty(size)
    for i in range(size):
        b = {k: (v[i] if isinstance(v, np.ndarray) else v)
             for k, v in cols.items()}
        out[i] = ex.evaluate(e, b, dps=dps)
    return out


def approach_arrays(md, s, base_bindings, offsets):
    """Array binding for points marching off the zero set.

    From each base point p the samples are p + eps * v with v = grad s /
    |grad s|^2 at p, so the defining function grows like eps to leading
    order and positive eps sits on the s > 0 side.
    """
    names = md.chart.names
    n_up = tn.raise_slot(md.grad(s), 0, md.g_inv)
    norm2 = md.norm2_form(md.grad(s))
    eps = np.asarray(offsets, dtype=float)
    cols = {}
    extras = set()
    for b in base_bindings:
        extras.update(k for k in b if k not in names)
    base = {n: np.array([float(b[n]) for b in base_bindings]) for n in names}
    for k in extras:
        base[k] = np.array([float(b[k]) for b in base_bindings])
    nb = len(base_bindings)
    v = {}
    n2 = _eval_array(norm2, base, nb)
    for a, n in enumerate(names):
        v[n] = _eval_array(n_up.comps[a], base, nb) / n2
    for n in names:
        cols[n] = (base[n][:, None] + eps[None, :] * v[n][:, None]).ravel()
    for k in extras:
        cols[k] = np.repeat(base[k], len(eps))
    return cols, (len(base_bindings), len(eps))


def vanishing_order(md, f, s, base_bindings, offsets, floor=None,
                    logcorrected=False, dps=None):
    """Per-base-point least-squares slope of log|f| against log|s| along
    the approach offsets.

    The noise floor is scaled by the expression's own cancellation
    magnitude, so samples drowned in round-off are masked out of the fit;
    None marks residuals under the floor everywhere ("order >= cutoff").
    """
    from . import numutil
    cols, (nb, ne) = approach_arrays(md, s, base_bindings, offsets)
    if dps is None:
        fv = _eval_array(f, cols, nb * ne).reshape(nb, ne)
        sv = _eval_array(s, cols, nb * ne).reshape(nb, ne)
    else:
        fv = _eval_pointwise(f, cols, nb * ne, dps).reshape(nb, ne)
        sv = _eval_pointwise(s, cols, nb * ne, dps).reshape(nb, ne)
        floor = 1e-30 if floor is None else floor
    floor = numutil.NOISE_FLOOR if floor is None else floor
    fit = (numutil.fit_order_logcorrected if logcorrected
           else numutil.fit_order)
    return [fit(sv[i], fv[i], floor=floor) for i in range(nb)]


# --- unit defining functions --------------------------------------------------

def unit_normalize(md, s):
    """s / |grad s|: unit length on the zero set."""
    norm2 = md.norm2_form(md.grad(s))
    return ex.mul(s, ex.pow_(norm2, Fraction(-1, 2)))


def unit_improve(md, s, target_order, points=None, offsets=None, dps=None):
    """Multiplicative sweeps s <- s (1 - (|grad s|^2 - 1)/(2(k+1))) raising
    the vanishing order of |grad s|^2 - 1 by one per sweep.

    The input must already be unit-normalized (order >= 1); the final order
    is slope-verified when sample points are given.
    """
    for k in range(1, target_order):
        grad2 = md.norm2_form(md.grad(s))
        defect = ex.sub(grad2, ex.ONE)
        s = ex.simplify(ex.expand(ex.mul(s, ex.sub(ex.ONE, ex.mul(
            ex.num(1, 2 * (k + 1)), defect)))))
    if points is not None:
        grad2 = md.norm2_form(md.grad(s))
        slopes = vanishing_order(md, ex.sub(grad2, ex.ONE), s,
                                 points, offsets, dps=dps)
        order = _min_order(slopes)
        if order < target_order - SLOPE_TOL:
            raise OrderStallError(
                f"unit improvement stalled: slope {order:.2f} after "
                f"targeting order {target_order}")
    return s


# --- the order-raising recursion ----------------------------------------------

def improve_step(md, sd: ScaleDensity, k, points=None, offsets=None,
                 s_ref=None, dps=None) -> ScaleDensity:
    """One step of the multiplicative recursion at level ``k``.

    Step d is the obstructed one: its divisor (d-k) vanishes.
    """
    d = md.dim
    if k >= d:
        raise ObstructionOrderError(
            f"step k = {k} is obstructed at dimension {d}")
    if sd.verified_order < k - 1 - SLOPE_TOL:
        raise OrderViolationError(
            f"input order {sd.verified_order:.2f} below k-1 = {k - 1}")
    factor = ex.sub(ex.ONE, ex.mul(
        ex.num(d, 2 * (d - k) * (k + 1)), sd.residual()))
    sigma = ex.simplify(ex.expand(ex.mul(sd.sigma, factor)))
    out = make_scale(md, sigma, f"recursion_{k}", points, offsets,
                     s_ref=s_ref, dps=dps)
    out.log = sd.log + [(k, out.verified_order, ex.dag_size(sigma))]
    if points is not None and out.verified_order < k - SLOPE_TOL:
        raise OrderViolationError(
            f"step {k} reached slope {out.verified_order:.2f} < {k}")
    return out


def expansion_pipeline(md, s, points, offsets, steps=None, dps=None):
    """Normalize, then run the recursion up to the obstructed order.

    Returns the list [sigma_0, sigma_1, ..., sigma_{d-1}] of scale
    densities; sigma_{d-1} carries the obstruction in its residual.
    """
    d = md.dim
    steps = (d - 1) if steps is None else steps
    s0 = ex.simplify(ex.expand(unit_normalize(md, s)))
    out = [make_scale(md, s0, "unit_normalized", points, offsets,
                      s_ref=s0, dps=dps)]
    for k in range(1, steps + 1):
        out.append(improve_step(md, out[-1], k, points, offsets,
                                s_ref=s0, dps=dps))
    return out


# --- closed-form improvements and obstructions ---------------------------------

class NormalOperatorKit:
    """Scalar normal operators of a unit defining function: div n, grad_n,
    the Laplacian, J, and gradient pairings, with memoized compositions."""

    def __init__(self, md, s):
        self.md = md
        self.s = s
        self.n_down = md.grad(s)
        self.n_up = tn.raise_slot(self.n_down, 0, md.g_inv)
        self.divn = ex.expand(md.divergence(self.n_up))
        self.J = ex.expand(md.trace_adjusted_scalar())
        self._memo = {}

    def dn(self, f, times=1):
        for _ in range(times):
            key = ("dn", f.uid)
            got = self._memo.get(key)
            if got is None:
                got = ex.expand(self.md.directional(f, self.n_up))
                self._memo[key] = got
            f = got
        return f

    def lap(self, f):
        key = ("lap", f.uid)
        got = self._memo.get(key)
        if got is None:
            got = ex.expand(self.md.laplacian(f))
            self._memo[key] = got
        return got

    def pair(self, f, g):
        """g^{ab} grad_a f grad_b g."""
        d = self.md.dim
        xs = self.md.chart.vars
        df = [ex.differentiate(f, x) for x in xs]
        dg = [ex.differentiate(g, x) for x in xs]
        return ex.expand(ex.add(*[
            ex.mul(self.md.g_inv.comps[a, b], df[a], dg[b])
            for a in range(d) for b in range(d)]))

    def grad_pair_normal(self, f):
        """(grad_a f) grad_n grad^a f with the covariant normal derivative
        of the gradient vector."""
        gu = self.md.grad_up(f)
        dgu = self.md.covariant_derivative(gu)          # (c ^a)
        dn_vec = tn.contract_with(dgu, 0, self.n_up)    # ^a
        gd = self.md.grad(f)
        return ex.expand(ex.add(*[ex.mul(gd.comps[a], dn_vec.comps[a])
                                  for a in range(self.md.dim)]))


def improve_closed_form(md, s_unit, k, points=None, offsets=None,
                        dps=None) -> ScaleDensity:
    """Closed-form improvement of a unit defining function, k = 1..4.

    Dimension must exceed k (each level divides by (d-1)...(d-k)); the
    result's order is slope-verified when sample points are given.
    """
    d = md.dim
    if not 1 <= k <= 4:
        raise DimensionError("closed-form improvements exist for k = 1..4")
    if d <= k:
        raise DimensionError(f"level {k} needs dimension > {k}, got {d}")
    kit = NormalOperatorKit(md, s_unit)
    s = s_unit
    sigma = _closed_form_sigma(kit, s, d, k)
    out = make_scale(md, ex.simplify(sigma), f"closed_form_{k}",
                     points, offsets, s_ref=s_unit, dps=dps)
    if points is not None and out.verified_order < k - SLOPE_TOL:
        raise OrderViolationError(
            f"closed-form level {k} reached slope "
            f"{out.verified_order:.2f} < {k}")
    return out


def _closed_form_sigma(kit, s, d, k):
    F = Fraction
    divn = kit.divn
    J = kit.J
    sigma = s
    if k >= 1:
        sigma = ex.add(sigma, ex.mul(F(1, 2 * (d - 1)), ex.pow_(s, 2), divn))
    if k >= 2:
        term = ex.add(ex.mul(2, ex.pow_(divn, 2)),
                      ex.mul(-(d - 4), kit.dn(divn)),
                      ex.mul(2 * (d - 1), J))
        sigma = ex.add(sigma, ex.mul(F(1, 6 * (d - 2) * (d - 1)),
                                     ex.pow_(s, 3), term))
    if k >= 3:
        term = ex.add(
            ex.mul(F(5 * d - 6, d - 1), ex.pow_(divn, 3)),
            ex.mul(-4 * (2 * d - 9), divn, kit.dn(divn)),
            ex.mul((d - 4) * (d - 6), kit.dn(divn, 2)),
            ex.mul(3 * (d - 2), kit.lap(divn)),
            ex.mul(4 * (2 * d - 3), divn, J),
            ex.mul(-2 * (d - 6) * (d - 1), kit.dn(J)))
        sigma = ex.add(sigma, ex.mul(F(1, 24 * (d - 3) * (d - 2) * (d - 1)),
                                     ex.pow_(s, 4), term))
    if k >= 4:
        dn = kit.dn
        lap = kit.lap
        term = ex.add(
            ex.mul(F(13 * d**3 - 62 * d**2 + 100 * d - 48,
                     (d - 2) * (d - 1)**2), ex.pow_(divn, 4)),
            ex.mul(F(398 * d**2 - 880 * d - 49 * d**3 + 576,
                     (d - 2) * (d - 1)), ex.pow_(divn, 2), dn(divn)),
            ex.mul(F(13 * d**3 - 156 * d**2 + 524 * d - 384, d - 1),
                   divn, dn(divn, 2)),
            ex.mul(F(25 * d**2 - 94 * d + 72, d - 1), divn, lap(divn)),
            ex.mul(F(11 * d**4 - 149 * d**3 + 668 * d**2 - 1112 * d + 576,
                     (d - 2) * (d - 1)), ex.pow_(dn(divn), 2)),
            ex.mul(-(d - 4) * (d - 6) * (d - 8), dn(divn, 3)),
            ex.mul(F(-(3 * d**2 - 22 * d + 16) * (d - 3), d - 1),
                   kit.pair(divn, divn)),
            ex.mul(-4 * (d - 4) * (d - 3), lap(dn(divn))),
            ex.mul(-3 * (d - 2) * (d - 8), dn(lap(divn))),
            ex.mul(F(2 * (13 * d**2 - 58 * d + 72), d - 2),
                   ex.pow_(divn, 2), J),
            ex.mul(F(-4 * (4 * d**3 - 35 * d**2 + 88 * d - 72), d - 2),
                   dn(divn), J),
            ex.mul(F(4 * (d - 4) * (d - 3) * (d - 1), d - 2), ex.pow_(J, 2)),
            ex.mul(-6 * (3 * d - 4) * (d - 6), divn, dn(J)),
            ex.mul(8 * (d - 3) * (d - 1), lap(J)),
            ex.mul(2 * (d - 8) * (d - 6) * (d - 1), dn(J, 2)))
        sigma = ex.add(sigma, ex.mul(
            F(1, 120 * (d - 4) * (d - 3) * (d - 2) * (d - 1)),
            ex.pow_(s, 5), term))
    return sigma


def obstruction_closed_form(md, s_unit, d=None):
    """Obstruction residual coefficient in terms of a unit defining
    function, for ambient dimensions two through five.

    The returned expression restricts to the obstruction density on the
    zero set; it is exact bookkeeping of the residual of the order-(d-1)
    closed-form improvement.
    """
    d = md.dim if d is None else d
    if d != md.dim:
        raise DimensionError("dimension argument must match the metric")
    if not 2 <= d <= 5:
        raise DimensionError(
            "closed-form obstruction available for dimensions 2..5")
    kit = NormalOperatorKit(md, s_unit)
    dn, lap, pair = kit.dn, kit.lap, kit.pair
    divn, J = kit.divn, kit.J
    F = Fraction
    if d == 2:
        return ex.add(ex.neg(ex.pow_(divn, 2)), ex.neg(dn(divn)), ex.neg(J))
    if d == 3:
        body = ex.add(
            ex.mul(2, lap(divn)),
            ex.mul(2, dn(divn, 2)),
            ex.mul(8, divn, dn(divn)),
            ex.mul(3, ex.pow_(divn, 3)),
            ex.mul(8, divn, J),
            ex.mul(8, dn(J)))
        return ex.mul(F(-1, 12), body)
    if d == 4:
        body = ex.add(
            ex.mul(9, dn(lap(divn))),
            ex.mul(12, divn, lap(divn)),
            ex.mul(6, divn, dn(divn, 2)),
            ex.mul(3, pair(divn, divn)),
            ex.mul(6, ex.pow_(dn(divn), 2)),
            ex.mul(18, ex.pow_(divn, 2), dn(divn)),
            ex.mul(4, ex.pow_(divn, 4)),
            ex.mul(9, lap(J)),
            ex.mul(18, dn(J, 2)),
            ex.mul(36, divn, dn(J)),
            ex.mul(18, dn(divn), J),
            ex.mul(18, ex.pow_(divn, 2), J))
        return ex.mul(F(-1, 108), body)
    body = ex.add(
        ex.mul(-312, divn, ex.pow_(dn(divn), 2)),
        ex.mul(352, divn, dn(divn, 3)),
        ex.mul(-155, ex.pow_(divn, 5)),
        ex.mul(44, ex.pow_(divn, 2), dn(divn, 2)),
        ex.mul(-832, ex.pow_(divn, 3), dn(divn)),
        ex.mul(480, dn(divn), dn(divn, 2)),
        ex.mul(96, dn(divn, 4)),
        ex.mul(32, lap(dn(divn, 2))),
        ex.mul(288, divn, lap(dn(divn))),
        ex.mul(256, dn(lap(dn(divn)))),
        ex.mul(96, pair(divn, dn(divn))),
        ex.mul(-552, divn, pair(divn, divn)),
        ex.mul(-608, kit.grad_pair_normal(divn)),
        ex.mul(-1436, ex.pow_(divn, 2), lap(divn)),
        ex.mul(-1248, dn(divn), lap(divn)),
        ex.mul(-2176, divn, dn(lap(divn))),
        ex.mul(-864, dn(lap(divn), 2)),
        ex.mul(-288, lap(lap(divn))),
        ex.mul(-2304, divn, dn(divn), J),
        ex.mul(-832, ex.pow_(divn, 3), J),
        ex.mul(-640, dn(divn, 2), J),
        ex.mul(-384, lap(divn), J),
        ex.mul(1024, ex.pow_(J, 2), divn),
        ex.mul(512, J, dn(J)),
        ex.mul(-2496, ex.pow_(divn, 2), dn(J)),
        ex.mul(-2304, dn(divn), dn(J)),
        ex.mul(1536, J, dn(J)),
        ex.mul(-2432, divn, dn(J, 2)),
        ex.mul(-768, dn(J, 3)),
        ex.mul(-256, lap(dn(J))),
        ex.mul(-512, pair(divn, J)),
        ex.mul(-2176, divn, lap(J)),
        ex.mul(-2048, dn(lap(J))))
    return ex.mul(F(1, 46080), body)


# --- log improvement and numeric extraction -------------------------------------

def log_improve(md, sd: ScaleDensity, points=None, offsets=None,
                s_ref=None, dps=None) -> ScaleDensity:
    """One log-term improvement past the obstructed order (working scale
    tau = 1, so the log argument is the scale itself); evaluation is only
    meaningful on the sigma > 0 side."""
    d = md.dim
    sigma = ex.mul(sd.sigma, ex.add(ex.ONE, ex.mul(
        ex.num(d, 2 * (d + 1)), ex.log(sd.sigma), sd.residual())))
    I2, rho = scale_squared(md, sigma)
    order = ORDER_CUTOFF
    if points is not None:
        slopes = vanishing_order(md, ex.sub(I2, ex.ONE),
                                 s_ref if s_ref is not None else sd.sigma,
                                 points, offsets, logcorrected=True, dps=dps)
        order = _min_order(slopes)
    out = ScaleDensity(sigma, md, rho, I2, order, "log_improved", sd.log[:])
    return out


def numeric_obstruction(md, sd: ScaleDensity, s0, base_bindings, offsets,
                        stability_tol=5e-2, dps=None):
    """Obstruction values per base point by Richardson extrapolation of
    (S - 1) / s0^d along the approach offsets."""
    from . import numutil
    d = md.dim
    if sd.verified_order < d - SLOPE_TOL:
        raise OrderViolationError(
            f"scale only verified to order {sd.verified_order:.2f}; "
            f"need {d}")
    cols, (nb, ne) = approach_arrays(md, s0, base_bindings, offsets)
    if dps is None:
        res = _eval_array(sd.residual(), cols, nb * ne).reshape(nb, ne)
        s0v = _eval_array(s0, cols, nb * ne).reshape(nb, ne)
    else:
        res = _eval_pointwise(sd.residual(), cols, nb * ne, dps).reshape(nb, ne)
        s0v = _eval_pointwise(s0, cols, nb * ne, dps).reshape(nb, ne)
    out = []
    for i in range(nb):
        ratio = res[i] / s0v[i] ** d
        val, _ = numutil.neville_to_zero(s0v[i], ratio,
                                         stability_tol=stability_tol)
        out.append(val)
    return out


def canonical_extensions(md, sd: ScaleDensity):
    """Trace-free second fundamental form and rigidity density extended
    off the surface through the improved scale: hess sigma + P sigma
    + g rho, and its self-contraction."""
    if sd.verified_order < 2 - SLOPE_TOL:
        raise OrderViolationError("canonical extensions need order >= 2")
    hess = md.hessian(sd.sigma)
    P = md.schouten()
    g = md.g
    d = md.dim
    arr = np.empty((d, d), dtype=object)
    for a in range(d):
        for b in range(d):
            arr[a, b] = ex.add(hess.comps[a, b],
                               ex.mul(P.comps[a, b], sd.sigma),
                               ex.mul(g.comps[a, b], sd.rho))
    iio_ext = tn.TensorField(md.chart, (tn.down(), tn.down()), arr)
    K_ext = tn.full_contraction(iio_ext, iio_ext, md.g_inv)
    return iio_ext, K_ext


# --- Taylor coefficients ---------------------------------------------------------

def taylor_coefficients(e, name, base_binding, n):
    """Coefficients of the expansion of ``e`` along coordinate ``name``
    about the base point, orders 0..n."""
    out = []
    cur = e
    fact = 1.0
    for k in range(n + 1):
        out.append(ex.evaluate(cur, base_binding) / fact)
        cur = ex.differentiate(cur, name)
        fact *= (k + 1)
    return out
