"""Hypersurface invariants built from a defining function.

All extrinsic quantities are represented by one fixed family of extensions
off the zero set: with ``n_a = grad_a s``,

* unit conormal   ``nhat_a = n_a / |n|``
* first fundamental form  ``gamma_ab = g_ab - nhat_a nhat_b``
* second fundamental form ``II_ab = grad_a nhat_b - nhat_a grad_nhat nhat_b``
* mean curvature  ``H = (div nhat) / (d-1)``
* trace-free part ``IIo_ab = II_ab - H gamma_ab``

so that every term of a multi-term formula uses the same extension.
"Restriction to the hypersurface" always means numeric evaluation at
declared points with ``|s|`` below the on-surface tolerance.  The unit
normal points in the ``+grad s`` direction; replacing ``s`` by ``-s``
flips ``II`` and ``H``.
"""

from __future__ import annotations

import threading

import numpy as np

from . import expr as ex
from . import tensor as tn
from .errors import (
    DimensionError,
    NullConormalError,
    PreconditionError,
    TangencyError,
    TraceError,
)
from .geometry import MetricData, metric_data

__all__ = [
    "HyperContext", "build_context", "Embedding", "build_embedding",
    "rigidity_density", "fialkow", "membrane_density", "hypersurface_bach",
    "robin", "robin_tensor", "bgg_operator",
]


class HyperContext:
    """Cached extension fields of one defining function over one metric."""

    def __init__(self, md: MetricData, s):
        self.md = md
        self.s = s
        self._cache = {}
        self._lock = threading.RLock()

    @property
    def dim(self):
        return self.md.dim

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

    # --- conormal fields -----------------------------------------------------

    def n_down(self):
        return self._get("n_down", lambda: self.md.grad(self.s))

    def n_up(self):
        return self._get("n_up", lambda: self.md.raise_(self.n_down(), 0))

    def norm2(self):
        """|grad s|^2; must be positive on the working domain."""
        return self._get("norm2", lambda: self.md.norm2_form(self.n_down()))

    def norm(self):
        return self._get("norm", lambda: ex.sqrt(self.norm2()))

    def inv_norm(self):
        return self._get("inv_norm",
                         lambda: ex.pow_(self.norm2(), ex.Fraction(-1, 2)))

    def nhat_down(self):
        return self._get("nhat_down",
                         lambda: self.n_down().scale(self.inv_norm()))

    def nhat_up(self):
        return self._get("nhat_up",
                         lambda: self.md.raise_(self.nhat_down(), 0))

    # --- first and second fundamental forms ----------------------------------

    def gamma_down(self):
        def build():
            nh = self.nhat_down()
            return self.md.g - tn.tensor_product(nh, nh)
        return self._get("gamma_down", build)

    def projector(self):
        """Mixed projector gamma^a_b = delta^a_b - nhat^a nhat_b."""
        def build():
            d = self.dim
            nu = self.nhat_up()
            nd = self.nhat_down()
            arr = np.empty((d, d), dtype=object)
            for a in range(d):
                for b in range(d):
                    delta = ex.ONE if a == b else ex.ZERO
                    arr[a, b] = ex.sub(delta, ex.mul(nu.comps[a], nd.comps[b]))
            return tn.TensorField(self.md.chart, (tn.up(), tn.down()), arr)
        return self._get("projector", build)

    def grad_nhat(self):
        return self._get("grad_nhat",
                         lambda: self.md.covariant_derivative(self.nhat_down()))

    def second_fundamental(self):
        """II_ab (symmetric on the surface, tangential by construction)."""
        def build():
            d = self.dim
            dn = self.grad_nhat()
            nu = self.nhat_up()
            nd = self.nhat_down()
            # grad_nhat nhat_b = nhat^c grad_c nhat_b
            acc = [ex.add(*[ex.mul(nu.comps[c], dn.comps[c, b])
                            for c in range(d)]) for b in range(d)]
            arr = np.empty((d, d), dtype=object)
            for a in range(d):
                for b in range(d):
                    arr[a, b] = ex.sub(dn.comps[a, b],
                                       ex.mul(nd.comps[a], acc[b]))
            return tn.TensorField(self.md.chart, (tn.down(), tn.down()), arr)
        return self._get("II", build)

    def mean_curvature(self):
        return self._get("H", lambda: ex.mul(
            ex.num(1, self.dim - 1), self.md.divergence(self.nhat_up())))

    def trace_free_second_fundamental(self):
        def build():
            H = self.mean_curvature()
            return self.second_fundamental() - self.gamma_down().scale(H)
        return self._get("IIo", build)

    def rigidity(self):
        """K = IIo_ab IIo^ab."""
        def build():
            iio = self.trace_free_second_fundamental()
            return tn.full_contraction(iio, iio, self.md.g_inv)
        return self._get("K", build)

    # --- normal-contracted curvature -----------------------------------------

    def nhat_weyl2(self):
        """nhat^c nhat^d W_cabd."""
        return self._get("nhat_weyl2", lambda: tn.directional_contraction(
            self.md.weyl(), self.nhat_up(), 2))

    def nhat_weyl1(self):
        """nhat^d W_dabc."""
        return self._get("nhat_weyl1", lambda: tn.directional_contraction(
            self.md.weyl(), self.nhat_up(), 1))

    def nhat_cotton(self):
        """nhat^c C_cab."""
        return self._get("nhat_cotton", lambda: tn.directional_contraction(
            self.md.cotton(), self.nhat_up(), 1))

    def ric_nn(self):
        return self._get("ric_nn", lambda: tn.directional_contraction(
            self.md.ricci(), self.nhat_up(), 2).comps[()])

    def schouten_nn(self):
        return self._get("schouten_nn", lambda: tn.directional_contraction(
            self.md.schouten(), self.nhat_up(), 2).comps[()])

    # --- checks ----------------------------------------------------------------

    def validate(self, bindings):
        """Spacelike-conormal check at the given points."""
        for b in bindings:
            v = ex.evaluate(self.norm2(), b)
            if not v > 0:
                raise NullConormalError(
                    f"g(grad s, grad s) = {v:.3e} <= 0 at {b}")

    def tangential_part(self, t):
        """Project every slot of an all-down ambient tensor with gamma^c_a."""
        proj = self.projector()
        out = t
        for i in range(t.rank):
            if t.slots[i].variance != tn.DOWN:
                raise PreconditionError("tangential_part expects down slots")
            out = _apply_projector(out, i, proj)
        return out


def _apply_projector(t, i, proj):
    d = t.chart.dim
    arr = np.empty(t.comps.shape, dtype=object)
    for idx in np.ndindex(*arr.shape):
        terms = []
        for e in range(d):
            src = idx[:i] + (e,) + idx[i + 1:]
            terms.append(ex.mul(proj.comps[e, idx[i]], t.comps[src]))
        arr[idx] = ex.add(*terms)
    return tn.TensorField(t.chart, t.slots, arr)


def build_context(md: MetricData, s) -> HyperContext:
    """All extension fields for defining function ``s`` (lazily built)."""
    return HyperContext(md, s)


# --- embeddings ---------------------------------------------------------------


class Embedding:
    """A parametrized patch of the zero set with its intrinsic geometry."""

    def __init__(self, md, sigma_chart, maps, md_bar, jac):
        self.md = md
        self.chart = sigma_chart
        self.maps = tuple(maps)
        self.md_bar = md_bar
        self.jac = jac  # jac[a][i] = d x^a / d u^i
        self._sub = dict(zip(md.chart.names, self.maps))

    @property
    def dim(self):
        return self.chart.dim

    def pull_scalar(self, e):
        """Compose an ambient scalar with the embedding maps."""
        return ex.substitute_many(e, self._sub)

    def pullback(self, t):
        """J^a_i ... J^b_j T_{a..b} on the surface chart (all-down T)."""
        for s in t.slots:
            if s.variance != tn.DOWN:
                raise PreconditionError("pullback expects an all-down tensor")
        d = self.md.dim
        db = self.dim
        r = t.rank
        pulled = t.map(self.pull_scalar)
        arr = np.empty((db,) * r, dtype=object)
        for idx in np.ndindex(*arr.shape):
            terms = []
            for jdx in np.ndindex(*(d,) * r):
                f = ex.mul(pulled.comps[jdx],
                           *[self.jac[jdx[k]][idx[k]] for k in range(r)])
                terms.append(f)
            arr[idx] = ex.add(*terms)
        slots = (tn.Slot(tn.DOWN, tn.SIGMA),) * r
        return tn.TensorField(self.chart, slots, arr)

    def validate_on_surface(self, s, bindings, tol):
        for b in bindings:
            v = ex.evaluate(self.pull_scalar(s), b)
            if abs(v) > tol:
                raise TangencyError(
                    f"embedding point {b} lies off the surface: s = {v:.3e}")

    def validate_tangency(self, hc, bindings, tol=1e-10):
        nhat = hc.nhat_down()
        for b in bindings:
            for i in range(self.dim):
                val = 0.0
                for a in range(self.md.dim):
                    val += ex.evaluate(
                        ex.mul(self.jac[a][i],
                               self.pull_scalar(nhat.comps[a])), b)
                if abs(val) > tol:
                    raise TangencyError(
                        f"Jacobian column {i} not tangent at {b}: {val:.3e}")


def build_embedding(md, sigma_names, maps, probes) -> Embedding:
    """Intrinsic geometry of a parametrized surface patch.

    ``maps`` are the ambient coordinates as expressions in the surface
    coordinates; ``probes`` are surface-chart bindings used to fix the
    induced metric's determinant sign and check invertibility.
    """
    sigma_chart = tn.Chart(sigma_names)
    d, db = md.dim, sigma_chart.dim
    jac = [[ex.differentiate(maps[a], u) for u in sigma_chart.vars]
           for a in range(d)]
    g_pulled = [[ex.substitute_many(md.g.comps[a, b],
                                    dict(zip(md.chart.names, maps)))
                 for b in range(d)] for a in range(d)]
    arr = np.empty((db, db), dtype=object)
    for i in range(db):
        for j in range(i, db):
            terms = []
            for a in range(d):
                for b in range(d):
                    terms.append(ex.mul(jac[a][i], jac[b][j], g_pulled[a][b]))
            arr[i, j] = arr[j, i] = ex.add(*terms)
    gbar = tn.TensorField(sigma_chart,
                          (tn.Slot(tn.DOWN, tn.SIGMA),) * 2, arr)
    md_bar = metric_data(sigma_chart, gbar, probes, frame=tn.SIGMA)
    return Embedding(md, sigma_chart, maps, md_bar, jac)


# --- derived hypersurface invariants -------------------------------------------


def rigidity_density(hc: HyperContext):
    """K = tr IIo^2, as an extension field."""
    return hc.rigidity()


def fialkow(hc: HyperContext, emb: Embedding):
    """Fialkow tensor on the surface chart, together with the conformally
    invariant combination IIo^2 - gbar K / (2(db-1)) - nhat-Weyl that equals
    (db-2) times it (returned for cross-checking)."""
    db = emb.dim
    if db < 3:
        raise DimensionError("Fialkow tensor needs surface dimension >= 3")
    mb = emb.md_bar
    P_pull = emb.pullback(hc.md.schouten())
    Pbar = mb.schouten()
    H = emb.pull_scalar(hc.mean_curvature())
    iio = emb.pullback(hc.trace_free_second_fundamental())
    gbar = mb.g
    half_h2 = ex.mul(ex.num(1, 2), ex.pow_(H, 2))
    fial = (P_pull - Pbar + iio.scale(H) + gbar.scale(half_h2))
    # left-hand combination
    iio_ud = mb.raise_(iio, 0)
    d_ = db
    iio2 = tn.TensorField(emb.chart, iio.slots, np.empty((d_, d_), dtype=object))
    for i in range(d_):
        for j in range(d_):
            iio2.comps[i, j] = ex.add(*[ex.mul(iio_ud.comps[k, i],
                                               iio.comps[k, j])
                                        for k in range(d_)])
    K = tn.full_contraction(iio, iio, mb.g_inv)
    coef = ex.mul(ex.num(1, 2 * (db - 1)), K)
    what = emb.pullback(hc.nhat_weyl2())
    lhs = iio2 - gbar.scale(coef) - what
    return fial, lhs


def _iio_matrix_power_trace(iio_ud, k):
    d = iio_ud.chart.dim
    m = iio_ud.comps
    acc = m
    for _ in range(k - 1):
        nxt = np.empty((d, d), dtype=object)
        for i in range(d):
            for j in range(d):
                nxt[i, j] = ex.add(*[ex.mul(acc[i, e], m[e, j])
                                     for e in range(d)])
        acc = nxt
    return ex.add(*[acc[i, i] for i in range(d)])


def membrane_density(hc: HyperContext, emb: Embedding, check=None, tol=1e-8):
    """Membrane rigidity density L = tr(IIo Fialkow), surface dimension 3.

    Also computes the ambient-extension route tr IIo^3 - W(nhat, IIo, nhat)
    and cross-checks the two at the given surface bindings.
    """
    if emb.dim != 3:
        raise DimensionError("membrane rigidity density needs d-bar = 3")
    mb = emb.md_bar
    fial, _ = fialkow(hc, emb)
    iio = emb.pullback(hc.trace_free_second_fundamental())
    L_intr = tn.full_contraction(iio, fial, mb.g_inv)

    iio_amb = hc.trace_free_second_fundamental()
    iio_ud = hc.md.raise_(iio_amb, 0)
    tr3 = _iio_matrix_power_trace(iio_ud, 3)
    what = hc.nhat_weyl2()
    w_iio = tn.full_contraction(what, iio_amb, hc.md.g_inv)
    L_amb = ex.sub(tr3, w_iio)
    if check:
        for b_sigma, b_amb in check:
            a = ex.evaluate(L_intr, b_sigma)
            c = ex.evaluate(L_amb, b_amb)
            if abs(a - c) > tol * max(1.0, abs(a), abs(c)):
                raise PreconditionError(
                    f"membrane density routes disagree: {a} vs {c}")
    return L_intr, L_amb


def hypersurface_bach(hc: HyperContext, emb: Embedding):
    """B_ij = nhat-Cotton^T_(ij) + H nhat-Weyl_ij - grad-bar^k nhat-Weyl^T_(ij)k.

    A symmetric weight -1 conformal density on three-dimensional surfaces.
    """
    if emb.dim != 3:
        raise DimensionError("hypersurface Bach tensor needs d-bar = 3")
    mb = emb.md_bar
    chat = emb.pullback(hc.nhat_cotton())         # slots (i j) from C_cab
    chat_sym = tn.symmetrize(chat, (0, 1))
    H = emb.pull_scalar(hc.mean_curvature())
    what2 = emb.pullback(hc.nhat_weyl2())
    what3 = emb.pullback(hc.nhat_weyl1())         # slots (i j k) from W_dabc
    what3_sym = tn.symmetrize(what3, (0, 1))
    grad_w = mb.covariant_derivative(what3_sym)   # slots (c i j k)
    grad_w_up = mb.raise_(grad_w, 0)
    div_w = tn.contract(grad_w_up, 0, 3)          # grad-bar^k X_ijk
    return chat_sym + what2.scale(H) - div_w


def robin(hc: HyperContext, f, w):
    """Conformal Robin operator grad_nhat f - w H f (restrict to evaluate)."""
    dn_f = hc.md.directional(f, hc.nhat_up())
    return ex.sub(dn_f, ex.mul(ex.num(w) if not isinstance(w, ex.Expr) else w,
                               hc.mean_curvature(), f))


def robin_tensor(hc: HyperContext, X, w, check=None, tol=1e-8):
    """(grad_nhat X_ab - (w-2) H X_ab)^T for a symmetric rank-2 density X
    satisfying nhat.X = 0 on the surface (checked at ``check`` bindings)."""
    if check:
        xn = tn.contract_with(X, 0, hc.nhat_up())
        for b in check:
            vals = xn.eval_at(b)
            if np.max(np.abs(vals)) > tol:
                raise PreconditionError(
                    f"nhat contraction of X is {np.max(np.abs(vals)):.2e} "
                    f"at {b}; robin_tensor needs a tangential X")
    dX = hc.md.covariant_derivative(X)
    dnX = tn.contract_with(dX, 0, hc.nhat_up())
    coeff = ex.num(w - 2) if not isinstance(w, ex.Expr) else ex.sub(w, 2)
    inner = dnX - X.scale(ex.mul(coeff, hc.mean_curvature()))
    return hc.tangential_part(inner)


def bgg_operator(emb: Embedding, X_uu, hc: HyperContext = None,
                 check=None, tol=1e-9):
    """Second-order conformally invariant operator on trace-free symmetric
    X^ij: grad-bar_i grad-bar_j X^ij + Pbar_ij X^ij for surface dimension
    >= 3; in dimension two the Schouten pullback plus H IIo replaces Pbar.
    """
    mb = emb.md_bar
    db = emb.dim
    if check:
        tr = tn.full_contraction(mb.g, X_uu)
        for b in check:
            v = ex.evaluate(tr, b)
            if abs(v) > tol:
                raise TraceError(f"X trace {v:.2e} at {b}")
    dX = mb.covariant_derivative(X_uu)            # (c ^i ^j)
    div1 = tn.contract(dX, 0, 1)                  # ^j
    ddiv = mb.covariant_derivative(div1)          # (c ^j)
    dd = tn.contract(ddiv, 0, 1).comps[()]
    if db >= 3:
        curv = tn.full_contraction(mb.schouten(), X_uu)
    else:
        if hc is None:
            raise DimensionError(
                "dimension-two operator needs the ambient context")
        P_pull = emb.pullback(hc.md.schouten())
        H = emb.pull_scalar(hc.mean_curvature())
        iio = emb.pullback(hc.trace_free_second_fundamental())
        curv = ex.add(tn.full_contraction(P_pull, X_uu),
                      ex.mul(H, tn.full_contraction(iio, X_uu)))
    return ex.add(dd, curv)
