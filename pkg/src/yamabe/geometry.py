"""Chart-level (pseudo-)Riemannian machinery: metric inverse, Levi-Civita
connection, curvature tensors and covariant calculus on tensor fields.

Conventions used throughout the package
---------------------------------------
* Curvature sign: ``R(u,v)w = [grad_u, grad_v]w - grad_{[u,v]}w``; in
  components ``R_ab^c_d = d_a Gamma^c_bd - d_b Gamma^c_ad
  + Gamma^c_ae Gamma^e_bd - Gamma^c_be Gamma^e_ad``.  The all-down tensor
  is ``R_abcd = g_ce R_ab^e_d``; with it the unit 2-sphere has
  ``R_thph,thph = sin^2(theta)`` and spheres have positive scalar curvature.
* Ricci: ``Ric_bd = R_ab^a_d``; scalar ``Sc = g^bd Ric_bd``.
* Trace adjustment of Ricci: ``Ric = (d-2) P + g J`` with ``J = P^a_a
  = Sc / (2(d-1))`` for d >= 3 and ``J = Sc/2`` in dimension two, where the
  rank-2 ``P`` is undefined.
* Weyl: ``W_abcd = R_abcd - g_ac P_db + g_ad P_cb + g_bc P_da - g_bd P_ca``;
  totally trace-free, conformally invariant with one index up:
  ``W_ab^c_d``.
* Cotton: ``C_abc = grad_a P_bc - grad_b P_ac`` (antisymmetric in ab); for
  d >= 4 it satisfies ``(d-3) C_abc = grad^d W_abdc``-type divergence
  identities, which the test suite checks numerically.

Pseudo-Riemannian metrics are supported: there is no signature
declaration, and volume factors use sqrt(|det g|) with the determinant
sign probed numerically at the declared sample points.
"""

from __future__ import annotations

import threading

import numpy as np

from . import expr as ex
from . import tensor as tn
from .errors import DimensionError, FrameError, SingularMetricError

__all__ = ["MetricData", "metric_data"]


def _sym_det(entries, rows, cols, memo):
    """Determinant of the symbolic submatrix by Laplace expansion."""
    key = (rows, cols)
    got = memo.get(key)
    if got is not None:
        return got
    if len(rows) == 1:
        val = entries[rows[0]][cols[0]]
    else:
        terms = []
        r0 = rows[0]
        rest = rows[1:]
        for k, c in enumerate(cols):
            sub = _sym_det(entries, rest, cols[:k] + cols[k + 1:], memo)
            term = ex.mul(entries[r0][c], sub)
            terms.append(term if k % 2 == 0 else ex.neg(term))
        val = ex.add(*terms)
    memo[key] = val
    return val


class MetricData:
    """A metric with its derived connection and curvature, lazily cached.

    Immutable after construction; cache fill is synchronized so queries are
    safe from many threads.
    """

    def __init__(self, chart, g, det_sign, frame=tn.AMBIENT):
        self.chart = chart
        self.frame = frame
        self.g = g
        self.det_sign = det_sign
        d = chart.dim
        entries = [[g.comps[i, j] for j in range(d)] for i in range(d)]
        memo = {}
        idx = tuple(range(d))
        self.det = _sym_det(entries, idx, idx, memo)
        inv = np.empty((d, d), dtype=object)
        det_inv = ex.pow_(self.det, -1)
        for i in range(d):
            for j in range(d):
                rows = tuple(k for k in idx if k != j)
                cols = tuple(k for k in idx if k != i)
                minor = _sym_det(entries, rows, cols, memo) if d > 1 else ex.ONE
                cof = minor if (i + j) % 2 == 0 else ex.neg(minor)
                inv[i, j] = ex.mul(cof, det_inv)
        self.g_inv = tn.TensorField(chart, (tn.Slot(tn.UP, frame),) * 2, inv)
        self.sqrt_abs_det = ex.sqrt(ex.mul(ex.num(det_sign), self.det))
        self._cache = {}
        # reentrant: cache builders call other cached getters
        self._lock = threading.RLock()

    @property
    def dim(self):
        return self.chart.dim

    def _get(self, name, builder):
        got = self._cache.get(name)
        if got is not None:
            return got
        with self._lock:
            got = self._cache.get(name)
            if got is None:
                got = builder()
                self._cache[name] = got
            return got

    # --- connection --------------------------------------------------------

    def christoffel(self):
        """Gamma^a_bc as an object array."""
        return self._get("christoffel", self._build_christoffel)

    def _build_christoffel(self):
        d = self.dim
        xs = self.chart.vars
        g = self.g.comps
        dg = np.empty((d, d, d), dtype=object)  # dg[c][a][b] = d_c g_ab
        for c in range(d):
            for a in range(d):
                for b in range(a, d):
                    val = ex.differentiate(g[a, b], xs[c])
                    dg[c, a, b] = val
                    dg[c, b, a] = val
        gamma = np.empty((d, d, d), dtype=object)
        half = ex.num(1, 2)
        for a in range(d):
            for b in range(d):
                for c in range(b, d):
                    terms = []
                    for e in range(d):
                        combo = ex.add(dg[b, e, c], dg[c, e, b],
                                       ex.neg(dg[e, b, c]))
                        terms.append(ex.mul(self.g_inv.comps[a, e], combo))
                    val = ex.mul(half, ex.add(*terms))
                    gamma[a, b, c] = val
                    gamma[a, c, b] = val
        return gamma

    # --- curvature ---------------------------------------------------------

    def riemann_ud(self):
        """R_ab^c_d (third slot up)."""
        return self._get("riemann_ud", self._build_riemann)

    def _build_riemann(self):
        d = self.dim
        xs = self.chart.vars
        gamma = self.christoffel()
        dgamma = np.empty((d, d, d, d), dtype=object)  # d_a Gamma^c_bd
        for a in range(d):
            for c in range(d):
                for b in range(d):
                    for e in range(b, d):
                        val = ex.differentiate(gamma[c, b, e], xs[a])
                        dgamma[a, c, b, e] = val
                        dgamma[a, c, e, b] = val
        arr = np.empty((d, d, d, d), dtype=object)
        slots = (tn.Slot(tn.DOWN, self.frame),) * 2 + \
            (tn.Slot(tn.UP, self.frame), tn.Slot(tn.DOWN, self.frame))
        for a in range(d):
            for b in range(a, d):
                for c in range(d):
                    for f in range(d):
                        if a == b:
                            arr[a, b, c, f] = ex.ZERO
                            continue
                        terms = [dgamma[a, c, b, f], ex.neg(dgamma[b, c, a, f])]
                        for e in range(d):
                            terms.append(ex.mul(gamma[c, a, e], gamma[e, b, f]))
                            terms.append(ex.neg(ex.mul(gamma[c, b, e],
                                                       gamma[e, a, f])))
                        val = ex.add(*terms)
                        arr[a, b, c, f] = val
                        arr[b, a, c, f] = ex.neg(val)
        return tn.TensorField(self.chart, slots, arr)

    def riemann(self):
        """All-down R_abcd."""
        return self._get("riemann_dddd",
                         lambda: tn.lower_slot(self.riemann_ud(), 2, self.g))

    def ricci(self):
        """Ric_bd = R_ab^a_d."""
        return self._get("ricci", lambda: tn.contract(self.riemann_ud(), 0, 2))

    def scalar_curvature(self):
        return self._get("sc", lambda: tn.full_contraction(
            self.ricci(), self.g_inv))

    def trace_adjusted_scalar(self):
        """J = Sc / (2(d-1)) for d >= 3, Sc/2 for d = 2."""
        d = self.dim
        den = 2 * (d - 1) if d >= 3 else 2
        return self._get("J", lambda: ex.mul(ex.num(1, den),
                                             self.scalar_curvature()))

    def schouten(self):
        """P_bd = (Ric_bd - J g_bd) / (d-2); undefined in dimension two."""
        if self.dim == 2:
            raise DimensionError("Schouten tensor is undefined at d = 2")
        return self._get("schouten", self._build_schouten)

    def _build_schouten(self):
        d = self.dim
        J = self.trace_adjusted_scalar()
        inv = ex.num(1, d - 2)
        ric = self.ricci()
        arr = np.empty((d, d), dtype=object)
        for a in range(d):
            for b in range(d):
                arr[a, b] = ex.mul(inv, ex.sub(
                    ric.comps[a, b], ex.mul(J, self.g.comps[a, b])))
        return tn.TensorField(self.chart, self.g.slots, arr)

    def weyl(self):
        """All-down W_abcd; identically zero below dimension four."""
        return self._get("weyl", self._build_weyl)

    def _build_weyl(self):
        d = self.dim
        if d < 4:
            return tn.zeros(self.chart, (tn.Slot(tn.DOWN, self.frame),) * 4)
        R = self.riemann()
        P = self.schouten()
        g = self.g.comps
        arr = np.empty((d, d, d, d), dtype=object)
        for a in range(d):
            for b in range(d):
                for c in range(d):
                    for e in range(d):
                        arr[a, b, c, e] = ex.add(
                            R.comps[a, b, c, e],
                            ex.neg(ex.mul(g[a, c], P.comps[e, b])),
                            ex.mul(g[a, e], P.comps[c, b]),
                            ex.mul(g[b, c], P.comps[e, a]),
                            ex.neg(ex.mul(g[b, e], P.comps[c, a])))
        return tn.TensorField(self.chart,
                              (tn.Slot(tn.DOWN, self.frame),) * 4, arr)

    def cotton(self):
        """C_abc = grad_a P_bc - grad_b P_ac."""
        if self.dim < 3:
            raise DimensionError("Cotton tensor needs d >= 3")
        return self._get("cotton", self._build_cotton)

    def _build_cotton(self):
        dP = self.covariant_derivative(self.schouten())
        d = self.dim
        arr = np.empty((d, d, d), dtype=object)
        for a in range(d):
            for b in range(d):
                for c in range(d):
                    arr[a, b, c] = ex.sub(dP.comps[a, b, c], dP.comps[b, a, c])
        return tn.TensorField(self.chart, dP.slots, arr)

    # --- covariant calculus --------------------------------------------------

    def covariant_derivative(self, t):
        """grad T with a new leading down slot."""
        for s in t.slots:
            if s.frame != self.frame:
                raise FrameError("tensor frame does not match this metric")
        d = self.dim
        xs = self.chart.vars
        gamma = self.christoffel()
        r = t.rank
        arr = np.empty((d,) * (r + 1), dtype=object)
        for idx in np.ndindex(*arr.shape):
            c, rest = idx[0], idx[1:]
            terms = [ex.differentiate(t.comps[rest], xs[c])]
            for i in range(r):
                for e in range(d):
                    src = rest[:i] + (e,) + rest[i + 1:]
                    if t.slots[i].variance == tn.DOWN:
                        terms.append(ex.neg(ex.mul(gamma[e, c, rest[i]],
                                                   t.comps[src])))
                    else:
                        terms.append(ex.mul(gamma[rest[i], c, e],
                                            t.comps[src]))
            arr[idx] = ex.add(*terms)
        slots = (tn.Slot(tn.DOWN, self.frame),) + t.slots
        return tn.TensorField(self.chart, slots, arr)

    def grad(self, f):
        """Exact gradient one-form of a scalar."""
        arr = np.array([ex.differentiate(f, x) for x in self.chart.vars],
                       dtype=object)
        return tn.TensorField(self.chart, (tn.Slot(tn.DOWN, self.frame),), arr)

    def grad_up(self, f):
        return tn.raise_slot(self.grad(f), 0, self.g_inv)

    def hessian(self, f):
        return self.covariant_derivative(self.grad(f))

    def divergence(self, v):
        """Covariant divergence of an up vector via the density trick."""
        if v.slots[0].variance != tn.UP:
            raise FrameError("divergence needs an up slot")
        rho = self.sqrt_abs_det
        terms = []
        for a, x in enumerate(self.chart.vars):
            terms.append(ex.differentiate(ex.mul(rho, v.comps[a]), x))
        return ex.mul(ex.pow_(rho, -1), ex.add(*terms))

    def contracted_christoffel(self):
        """g^{ab} Gamma^c_{ab}, the drift vector of the scalar Laplacian."""
        def build():
            d = self.dim
            gamma = self.christoffel()
            return [ex.add(*[ex.mul(self.g_inv.comps[a, b], gamma[c, a, b])
                             for a in range(d) for b in range(d)])
                    for c in range(d)]
        return self._get("contracted_christoffel", build)

    def laplacian(self, f):
        """Scalar Laplace-Beltrami operator.

        Uses g^{ab} d_a d_b f - (g^{ab} Gamma^c_ab) d_c f with the metric
        pieces precomputed, so repeated Laplacians only differentiate f.
        """
        d = self.dim
        xs = self.chart.vars
        drift = self.contracted_christoffel()
        df = [ex.differentiate(f, x) for x in xs]
        terms = []
        for a in range(d):
            dda = ex.differentiate(df[a], xs[a])
            terms.append(ex.mul(self.g_inv.comps[a, a], dda))
        for a in range(d):
            for b in range(a + 1, d):
                ddb = ex.differentiate(df[a], xs[b])
                terms.append(ex.mul(2, self.g_inv.comps[a, b], ddb))
        for c in range(d):
            terms.append(ex.neg(ex.mul(drift[c], df[c])))
        return ex.add(*terms)

    def directional(self, f, v_up):
        """v^a d_a f for a scalar f."""
        return ex.add(*[ex.mul(v_up.comps[a], ex.differentiate(f, x))
                        for a, x in enumerate(self.chart.vars)])

    def raise_(self, t, i):
        return tn.raise_slot(t, i, self.g_inv)

    def lower_(self, t, i):
        return tn.lower_slot(t, i, self.g)

    def norm2_form(self, w_down):
        """g^ab w_a w_b for a one-form."""
        d = self.dim
        return ex.add(*[ex.mul(self.g_inv.comps[a, b], w_down.comps[a],
                               w_down.comps[b])
                        for a in range(d) for b in range(d)])


def metric_data(chart, g, probes, frame=tn.AMBIENT, tol=1e-10):
    """Build MetricData after checking invertibility at the probe bindings.

    ``g`` is a rank-2 down-down TensorField; ``probes`` an iterable of
    bindings.  The determinant sign (fixed across the working domain) is
    taken from the probes.
    """
    d = chart.dim
    entries = [[g.comps[i, j] for j in range(d)] for i in range(d)]
    memo = {}
    idx = tuple(range(d))
    det = _sym_det(entries, idx, idx, memo)
    sign = None
    for b in probes:
        val = ex.evaluate(det, b)
        if abs(val) <= tol:
            raise SingularMetricError(
                f"metric determinant {val:.3e} at {b}")
        s = 1 if val > 0 else -1
        if sign is None:
            sign = s
        elif sign != s:
            raise SingularMetricError(
                "metric determinant changes sign across sample points")
    if sign is None:
        sign = 1
    return MetricData(chart, g, sign, frame)
