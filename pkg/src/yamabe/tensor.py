"""Dense tensor fields of symbolic components over a coordinate chart."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import SlotError

UP = "u"
DOWN = "d"
AMBIENT = "ambient"
SIGMA = "sigma"


class Chart:
    """An ordered tuple of coordinate names with their variable nodes."""

    __slots__ = ("names", "vars")

    def __init__(self, names):
        self.names = tuple(names)
        self.vars = tuple(ex.var(n) for n in self.names)

    @property
    def dim(self):
        return len(self.names)

    def binding(self, point, params=None):
        b = dict(zip(self.names, point))
        if params:
            b.update(params)
        return b

    def __eq__(self, other):
        return isinstance(other, Chart) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"Chart{self.names}"


@dataclass(frozen=True)
class Slot:
    variance: str  # "u" or "d"
    frame: str = AMBIENT


def up(frame=AMBIENT):
    return Slot(UP, frame)


def down(frame=AMBIENT):
    return Slot(DOWN, frame)


class TensorField:
    """Chart-bound dense array of expressions with an index signature."""

    __slots__ = ("chart", "slots", "comps")

    def __init__(self, chart, slots, comps):
        self.chart = chart
        self.slots = tuple(slots)
        arr = np.asarray(comps, dtype=object)
        want = (chart.dim,) * len(self.slots)
        if arr.shape != want:
            raise SlotError(f"component shape {arr.shape} != {want}")
        self.comps = arr

    @property
    def rank(self):
        return len(self.slots)

    def __getitem__(self, idx):
        return self.comps[idx]

    def map(self, fn):
        out = np.empty(self.comps.shape, dtype=object)
        for idx in np.ndindex(*self.comps.shape):
            out[idx] = fn(self.comps[idx])
        return TensorField(self.chart, self.slots, out)

    def __add__(self, other):
        _check_same_signature(self, other)
        return zip_with(ex.add, self, other)

    def __sub__(self, other):
        _check_same_signature(self, other)
        return zip_with(lambda a, b: ex.sub(a, b), self, other)

    def __neg__(self):
        return self.map(ex.neg)

    def scale(self, f):
        return self.map(lambda c: ex.mul(f, c))

    def eval_at(self, binding):
        """Float array of all components at one point."""
        out = np.empty(self.comps.shape, dtype=float)
        for idx in np.ndindex(*self.comps.shape):
            out[idx] = ex.evaluate(self.comps[idx], binding)
        return out

    def __repr__(self):
        sig = "".join(s.variance for s in self.slots)
        return f"TensorField({sig}, chart={self.chart.names})"


def _check_same_signature(a, b):
    if a.chart != b.chart or a.slots != b.slots:
        raise SlotError("tensor signatures differ")


def zeros(chart, slots):
    arr = np.empty((chart.dim,) * len(slots), dtype=object)
    arr[...] = ex.ZERO
    return TensorField(chart, slots, arr)


def from_function(chart, slots, fn):
    arr = np.empty((chart.dim,) * len(slots), dtype=object)
    for idx in np.ndindex(*arr.shape):
        arr[idx] = fn(*idx)
    return TensorField(chart, slots, arr)


def zip_with(fn, a, b):
    out = np.empty(a.comps.shape, dtype=object)
    for idx in np.ndindex(*a.comps.shape):
        out[idx] = fn(a.comps[idx], b.comps[idx])
    return TensorField(a.chart, a.slots, out)


def tensor_product(a, b):
    if a.chart != b.chart:
        raise SlotError("tensor product across different charts")
    d = a.chart.dim
    slots = a.slots + b.slots
    arr = np.empty((d,) * len(slots), dtype=object)
    for ia in np.ndindex(*a.comps.shape):
        va = a.comps[ia]
        for ib in np.ndindex(*b.comps.shape):
            arr[ia + ib] = ex.mul(va, b.comps[ib])
    return TensorField(a.chart, slots, arr)


def contract(t, i, j):
    """Contract slot ``i`` against slot ``j`` (one up, one down, same frame)."""
    if i == j:
        raise SlotError("cannot contract a slot with itself")
    si, sj = t.slots[i], t.slots[j]
    if si.variance == sj.variance:
        raise SlotError("contraction needs one up and one down slot")
    if si.frame != sj.frame:
        raise SlotError("contraction across frames")
    d = t.chart.dim
    i, j = min(i, j), max(i, j)
    keep = [k for k in range(t.rank) if k not in (i, j)]
    slots = tuple(t.slots[k] for k in keep)
    arr = np.empty((d,) * len(keep), dtype=object)
    for idx in np.ndindex(*arr.shape):
        full = [None] * t.rank
        for pos, k in zip(idx, keep):
            full[k] = pos
        terms = []
        for e in range(d):
            full[i] = e
            full[j] = e
            terms.append(t.comps[tuple(full)])
        arr[idx] = ex.add(*terms)
    return TensorField(t.chart, slots, arr)


def contract_with(t, i, v):
    """Contract slot ``i`` of ``t`` with a rank-1 field of opposite variance."""
    if v.rank != 1:
        raise SlotError("second factor must be rank 1")
    si, sv = t.slots[i], v.slots[0]
    if si.variance == sv.variance or si.frame != sv.frame:
        raise SlotError("incompatible slots for contraction")
    d = t.chart.dim
    keep = [k for k in range(t.rank) if k != i]
    slots = tuple(t.slots[k] for k in keep)
    arr = np.empty((d,) * len(keep), dtype=object)
    for idx in np.ndindex(*arr.shape):
        full = [None] * t.rank
        for pos, k in zip(idx, keep):
            full[k] = pos
        terms = []
        for e in range(d):
            full[i] = e
            terms.append(ex.mul(v.comps[e], t.comps[tuple(full)]))
        arr[idx] = ex.add(*terms)
    return TensorField(t.chart, slots, arr)


def directional_contraction(t, v, count):
    """Contract ``count`` slots of ``t`` with ``v`` following the alternating
    leftmost-rightmost rule: 1 -> first slot; 2 -> first and last;
    3 -> first, last, second; and so on."""
    r = t.rank
    if count > r:
        raise SlotError("more contractions than slots")
    chosen = []
    lo, hi = 0, r - 1
    for k in range(count):
        if k % 2 == 0:
            chosen.append(lo)
            lo += 1
        else:
            chosen.append(hi)
            hi -= 1
    out = t
    for pos in sorted(chosen, reverse=True):
        out = contract_with(out, pos, v)
    return out


def transpose(t, perm):
    slots = tuple(t.slots[p] for p in perm)
    return TensorField(t.chart, slots, np.transpose(t.comps, perm))


def _sym_group(t, positions, sign):
    positions = tuple(sorted(positions))
    base = list(range(t.rank))
    perms = []
    for p in itertools.permutations(positions):
        q = base[:]
        for a, b in zip(positions, p):
            q[a] = b
        parity = 1
        if sign:
            # count inversions of the sub-permutation
            inv = sum(1 for x in range(len(p)) for y in range(x + 1, len(p))
                      if p[x] > p[y])
            parity = -1 if inv % 2 else 1
        perms.append((q, parity))
    arr = np.empty(t.comps.shape, dtype=object)
    w = ex.num(1, len(perms))
    for idx in np.ndindex(*arr.shape):
        terms = []
        for q, parity in perms:
            src = tuple(idx[q[k]] for k in range(t.rank))
            term = t.comps[src]
            terms.append(term if parity > 0 else ex.neg(term))
        arr[idx] = ex.mul(w, ex.add(*terms))
    return TensorField(t.chart, t.slots, arr)


def symmetrize(t, positions):
    """Unit-weight symmetrization over the given slot positions."""
    return _sym_group(t, positions, sign=False)


def antisymmetrize(t, positions):
    """Unit-weight antisymmetrization over the given slot positions."""
    return _sym_group(t, positions, sign=True)


def raise_slot(t, i, g_inv):
    if t.slots[i].variance != DOWN:
        raise SlotError("slot already up")
    return _move_slot(t, i, g_inv, Slot(UP, t.slots[i].frame))


def lower_slot(t, i, g):
    if t.slots[i].variance != UP:
        raise SlotError("slot already down")
    return _move_slot(t, i, g, Slot(DOWN, t.slots[i].frame))


def _move_slot(t, i, metric2, new_slot):
    d = t.chart.dim
    arr = np.empty(t.comps.shape, dtype=object)
    for idx in np.ndindex(*arr.shape):
        terms = []
        for e in range(d):
            src = idx[:i] + (e,) + idx[i + 1:]
            terms.append(ex.mul(metric2.comps[idx[i], e], t.comps[src]))
        arr[idx] = ex.add(*terms)
    slots = t.slots[:i] + (new_slot,) + t.slots[i + 1:]
    return TensorField(t.chart, slots, arr)


def tracefree_sym2(t, g, g_inv, dim):
    """Trace-free symmetric part of a rank-2 down-down tensor."""
    s = symmetrize(t, (0, 1))
    tr = ex.ZERO
    d = t.chart.dim
    tr = ex.add(*[ex.mul(g_inv.comps[a, b], s.comps[a, b])
                  for a in range(d) for b in range(d)])
    frac = ex.mul(ex.num(1, dim), tr)
    out = np.empty(s.comps.shape, dtype=object)
    for idx in np.ndindex(*out.shape):
        out[idx] = ex.sub(s.comps[idx], ex.mul(frac, g.comps[idx]))
    return TensorField(t.chart, t.slots, out)


def full_contraction(a, b, g_inv=None, g=None):
    """Scalar a_{i...} b^{i...} for same-signature or metric-dual tensors.

    With ``g_inv`` given, both tensors may be all-down: indices of ``b``
    are raised on the fly.
    """
    d = a.chart.dim
    if g_inv is None:
        terms = [ex.mul(a.comps[idx], b.comps[idx])
                 for idx in np.ndindex(*a.comps.shape)]
        return ex.add(*terms)
    terms = []
    r = a.rank
    for idx in np.ndindex(*a.comps.shape):
        for jdx in np.ndindex(*b.comps.shape):
            f = ex.mul(a.comps[idx], b.comps[jdx],
                       *[g_inv.comps[idx[k], jdx[k]] for k in range(r)])
            terms.append(f)
    return ex.add(*terms)
