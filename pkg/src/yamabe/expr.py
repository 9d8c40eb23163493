"""Immutable symbolic expression DAG with exact differentiation.

Nodes are hash-consed: building the same expression twice returns the same
object, so structural equality is identity and derivatives can be memoized
per (node, variable).  Construction applies cheap local rewrites (constant
folding, 0/1 absorption, like-term and like-power collection); anything
beyond that lives in :func:`simplify`, and numeric evaluation -- not
canonical form -- is the ground truth for equality.

Every node carries a stable 64-bit structural hash, computed from the node
contents alone, so child ordering and ASCII printing are deterministic
across processes.
"""

from __future__ import annotations

import math
import threading
from decimal import Decimal
from fractions import Fraction

import numpy as np

from .errors import (
    DomainError,
    ExpressionBudgetError,
    UnboundVariableError,
)

__all__ = [
    "Expr", "var", "num", "add", "mul", "sub", "div", "neg", "pow_",
    "sqrt", "sin", "cos", "tan", "exp", "log",
    "differentiate", "evaluate", "substitute", "substitute_many",
    "simplify", "expand", "to_ascii", "dag_size", "node_count",
    "set_node_limit",
    "abs_magnitude", "is_numerically_zero", "ZERO", "ONE",
]

_MASK = (1 << 64) - 1

_KIND_CODE = {
    "num": 3, "var": 5, "add": 7, "mul": 11, "pow": 13, "sqrt": 17,
    "sin": 19, "cos": 23, "tan": 29, "exp": 31, "log": 37, "neg": 41,
}


def _mix(h: int, x: int) -> int:
    h = (h ^ (x & _MASK)) * 0x100000001B3 & _MASK
    return ((h << 7) | (h >> 57)) & _MASK


def _str_hash(s: str) -> int:
    h = 0xCBF29CE484222325
    for b in s.encode():
        h = _mix(h, b)
    return h


class Expr:
    """One interned node of the expression DAG.

    Supports ``+ - * / **`` against other expressions, ints, Fractions and
    floats (floats are converted to exact binary rationals).
    """

    __slots__ = ("kind", "args", "payload", "uid", "shash", "free", "_ascii")

    def __init__(self, kind, args, payload, uid, shash, free):
        self.kind = kind
        self.args = args
        self.payload = payload
        self.uid = uid
        self.shash = shash
        self.free = free
        self._ascii = None

    def __repr__(self):
        return to_ascii(self)

    def __hash__(self):
        return self.shash

    # Interned nodes compare by identity; default object.__eq__ is right,
    # but we keep == usable in dict keys alongside hash above.
    def __eq__(self, other):
        return self is other

    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, other):
        return pow_(self, other)

    def __neg__(self):
        return neg(self)


# --- interning --------------------------------------------------------------

_table: dict = {}
_lock = threading.Lock()
_uid_counter = 0
_node_limit = 5_000_000
_EMPTY = frozenset()
_free_cache: dict = {}


def set_node_limit(n: int) -> None:
    """Raise or lower the global node ceiling (default 5e6)."""
    global _node_limit
    _node_limit = int(n)


def node_count() -> int:
    """Total interned nodes so far in this process."""
    return _uid_counter


def _free_union(args, extra=None):
    sets = [a.free for a in args if a.free]
    if extra:
        sets.append(extra)
    if not sets:
        return _EMPTY
    if len(sets) == 1:
        s = sets[0]
    else:
        s = frozenset().union(*sets)
    key = tuple(sorted(s))
    cached = _free_cache.get(key)
    if cached is None:
        _free_cache[key] = s
        return s
    return cached


def _intern(kind, args, payload):
    if payload is None:
        pkey = None
    elif kind == "var":
        pkey = payload
    else:  # Fraction
        pkey = (payload.numerator, payload.denominator)
    key = (kind, pkey, tuple(a.uid for a in args))
    node = _table.get(key)
    if node is not None:
        return node
    with _lock:
        node = _table.get(key)
        if node is not None:
            return node
        global _uid_counter
        if _uid_counter >= _node_limit:
            raise ExpressionBudgetError(
                f"expression node ceiling of {_node_limit} reached; "
                f"raise it with set_node_limit() if this is intended")
        _uid_counter += 1
        h = _KIND_CODE[kind]
        if kind == "var":
            h = _mix(h, _str_hash(payload))
            free = _free_union((), frozenset((payload,)))
        else:
            if payload is not None:
                h = _mix(h, payload.numerator)
                h = _mix(h, payload.denominator)
            for a in args:
                h = _mix(h, a.shash)
            free = _free_union(args)
        node = Expr(kind, args, payload, _uid_counter, h, free)
        _table[key] = node
        return node


def _coerce(x):
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return num(x)
    if isinstance(x, float):
        return num(Fraction(x))
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


# --- constructors -----------------------------------------------------------

def var(name: str) -> Expr:
    return _intern("var", (), name)


def num(p, q=None) -> Expr:
    value = Fraction(p, q) if q is not None else Fraction(p)
    return _intern("num", (), value)


ZERO = num(0)
ONE = num(1)
MINUS_ONE = num(-1)
HALF = Fraction(1, 2)


def _sort(nodes):
    return sorted(nodes, key=lambda e: e.shash)


def _coeff_core(t):
    """Split a canonical term into (rational coefficient, core node)."""
    if t.kind == "neg":
        c, core = _coeff_core(t.args[0])
        return -c, core
    if t.kind == "mul":
        for i, a in enumerate(t.args):
            if a.kind == "num":
                rest = t.args[:i] + t.args[i + 1:]
                core = rest[0] if len(rest) == 1 else _intern("mul", rest, None)
                return a.payload, core
        return Fraction(1), t
    return Fraction(1), t


def _with_coeff(coeff, core):
    if coeff == 0:
        return ZERO
    if coeff == 1:
        return core
    if coeff == -1:
        return _intern("neg", (core,), None)
    factors = (num(coeff),) + (core.args if core.kind == "mul" else (core,))
    return _intern("mul", tuple(_sort(factors)), None)


def add(*xs) -> Expr:
    const = Fraction(0)
    acc: dict = {}
    stack = [x if isinstance(x, Expr) else _coerce(x) for x in xs]
    while stack:
        x = stack.pop()
        if x.kind == "add":
            stack.extend(x.args)
        elif x.kind == "num":
            const += x.payload
        else:
            c, core = _coeff_core(x)
            got = acc.get(core.uid)
            if got is None:
                acc[core.uid] = [c, core]
            else:
                got[0] += c
    terms = [_with_coeff(c, core) for c, core in acc.values() if c != 0]
    if const != 0:
        terms.append(num(const))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return _intern("add", tuple(_sort(terms)), None)


def _base_exp(f):
    if f.kind == "pow":
        return f.args[0], f.payload
    if f.kind == "sqrt":
        return f.args[0], HALF
    return f, Fraction(1)


def mul(*xs) -> Expr:
    coeff = Fraction(1)
    acc: dict = {}
    stack = [x if isinstance(x, Expr) else _coerce(x) for x in xs]
    while stack:
        x = stack.pop()
        if x.kind == "mul":
            stack.extend(x.args)
        elif x.kind == "num":
            coeff *= x.payload
        elif x.kind == "neg":
            coeff = -coeff
            stack.append(x.args[0])
        else:
            base, e = _base_exp(x)
            got = acc.get(base.uid)
            if got is None:
                acc[base.uid] = [e, base]
            else:
                got[0] += e
    if coeff == 0:
        return ZERO
    factors = []
    for e, base in acc.values():
        f = pow_(base, e)
        if f.kind == "num":
            coeff *= f.payload
        elif f.kind == "neg":
            coeff = -coeff
            factors.append(f.args[0])
        elif f is not ONE:
            factors.append(f)
    if not factors:
        return num(coeff)
    if len(factors) == 1:
        return _with_coeff(coeff, factors[0])
    if coeff == 1:
        return _intern("mul", tuple(_sort(factors)), None)
    if coeff == -1:
        return _intern("neg", (_intern("mul", tuple(_sort(factors)), None),), None)
    factors.append(num(coeff))
    return _intern("mul", tuple(_sort(factors)), None)


def neg(x) -> Expr:
    x = _coerce(x)
    if x.kind == "num":
        return num(-x.payload)
    if x.kind == "neg":
        return x.args[0]
    if x.kind == "mul":
        c, core = _coeff_core(x)
        if c != 1:
            return _with_coeff(-c, core)
    return _intern("neg", (x,), None)


def sub(a, b) -> Expr:
    return add(_coerce(a), neg(b))


def div(a, b) -> Expr:
    return mul(_coerce(a), pow_(_coerce(b), -1))


def _int_root(n: int, k: int):
    if n < 0:
        return None
    r = round(n ** (1.0 / k))
    for c in (r - 1, r, r + 1):
        if c >= 0 and c ** k == n:
            return c
    return None


def pow_(base, expo) -> Expr:
    base = _coerce(base)
    if isinstance(expo, Expr):
        if expo.kind != "num":
            raise TypeError("only rational exponents are supported")
        expo = expo.payload
    expo = Fraction(expo)
    if expo == 0:
        return ONE
    if expo == 1:
        return base
    if base.kind == "num":
        v = base.payload
        if expo.denominator == 1:
            if v == 0 and expo < 0:
                return _intern("pow", (base,), expo)
            return num(v ** expo.numerator)
        if v >= 0:
            pn = _int_root(v.numerator, expo.denominator)
            pd = _int_root(v.denominator, expo.denominator)
            if pn is not None and pd is not None:
                return num(Fraction(pn, pd) ** expo.numerator)
    if base.kind == "pow" and expo.denominator == 1:
        return pow_(base.args[0], base.payload * expo)
    if base.kind == "sqrt":
        return pow_(base.args[0], expo / 2)
    if base.kind == "neg" and expo.denominator == 1:
        inner = pow_(base.args[0], expo)
        return inner if expo.numerator % 2 == 0 else neg(inner)
    if expo == HALF:
        return _intern("sqrt", (base,), None)
    return _intern("pow", (base,), expo)


def sqrt(x) -> Expr:
    return pow_(_coerce(x), HALF)


def _unary(kind, x, fixed_points):
    x = _coerce(x)
    if x.kind == "num":
        folded = fixed_points.get(x.payload)
        if folded is not None:
            return folded
    return _intern(kind, (x,), None)


def sin(x) -> Expr:
    return _unary("sin", x, {Fraction(0): ZERO})


def cos(x) -> Expr:
    return _unary("cos", x, {Fraction(0): ONE})


def tan(x) -> Expr:
    return _unary("tan", x, {Fraction(0): ZERO})


def exp(x) -> Expr:
    return _unary("exp", x, {Fraction(0): ONE})


def log(x) -> Expr:
    return _unary("log", x, {Fraction(1): ZERO})


# --- traversal --------------------------------------------------------------

def _topo(e: Expr):
    """Children-first ordering of the DAG below ``e``.

    Iterative DFS with per-node child iterators: every node is expanded
    exactly once, so traversal stays linear in the DAG size even under
    heavy sharing.
    """
    order = []
    done = set()
    if e.uid in done:
        return order
    stack = [(e, iter(e.args))]
    while stack:
        node, it = stack[-1]
        for a in it:
            if a.uid not in done:
                stack.append((a, iter(a.args)))
                break
        else:
            done.add(node.uid)
            order.append(node)
            stack.pop()
    return order


def dag_size(e: Expr) -> int:
    return len(_topo(e))


# --- differentiation --------------------------------------------------------

_diff_memo: dict = {}


def differentiate(e: Expr, v) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``v``.

    Memoized per (node, variable); repeated calls only traverse the part of
    the DAG not already differentiated, and subtrees free of ``v`` are cut
    off immediately.
    """
    name = v.payload if isinstance(v, Expr) else v
    memo = _diff_memo
    if name not in e.free:
        return ZERO
    key0 = (e.uid, name)
    got = memo.get(key0)
    if got is not None:
        return got
    stack = [(e, iter(e.args))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for a in it:
            if name in a.free and (a.uid, name) not in memo:
                stack.append((a, iter(a.args)))
                advanced = True
                break
        if advanced:
            continue
        memo[(node.uid, name)] = _diff_rule(node, name)
        stack.pop()
    return memo[key0]


def _child_diff(a, name):
    if name not in a.free:
        return ZERO
    return _diff_memo[(a.uid, name)]


def _diff_rule(node, name):
    kind = node.kind
    if kind == "var":
        return ONE
    if kind == "add":
        return add(*[_child_diff(a, name) for a in node.args])
    if kind == "mul":
        terms = []
        args = node.args
        for i, a in enumerate(args):
            da = _child_diff(a, name)
            if da is ZERO:
                continue
            terms.append(mul(da, *args[:i], *args[i + 1:]))
        return add(*terms)
    if kind == "neg":
        return neg(_child_diff(node.args[0], name))
    a = node.args[0]
    da = _child_diff(a, name)
    if kind == "pow":
        r = node.payload
        return mul(num(r), pow_(a, r - 1), da)
    if kind == "sqrt":
        return mul(num(HALF), pow_(a, Fraction(-1, 2)), da)
    if kind == "sin":
        return mul(cos(a), da)
    if kind == "cos":
        return neg(mul(sin(a), da))
    if kind == "tan":
        return mul(add(ONE, pow_(tan(a), 2)), da)
    if kind == "exp":
        return mul(node, da)
    if kind == "log":
        return mul(pow_(a, -1), da)
    raise AssertionError(kind)


# --- substitution -----------------------------------------------------------

def substitute_many(e: Expr, mapping) -> Expr:
    """Replace variables by expressions (capture-free by construction)."""
    repl = {(k.payload if isinstance(k, Expr) else k): _coerce(v)
            for k, v in mapping.items()}
    names = set(repl)
    out: dict = {}
    for node in _topo(e):
        if not (node.free & names):
            out[node.uid] = node
        elif node.kind == "var":
            out[node.uid] = repl.get(node.payload, node)
        else:
            out[node.uid] = _rebuild(node, [out[a.uid] for a in node.args])
    return out[e.uid]


def substitute(e: Expr, v, r) -> Expr:
    return substitute_many(e, {v: r})


def _rebuild(node, new_args):
    if all(a is b for a, b in zip(node.args, new_args)):
        return node
    kind = node.kind
    if kind == "add":
        return add(*new_args)
    if kind == "mul":
        return mul(*new_args)
    if kind == "neg":
        return neg(new_args[0])
    if kind == "pow":
        return pow_(new_args[0], node.payload)
    return {"sqrt": sqrt, "sin": sin, "cos": cos, "tan": tan,
            "exp": exp, "log": log}[kind](new_args[0])


# --- simplification ---------------------------------------------------------

def simplify(e: Expr) -> Expr:
    """Best-effort local rewriting; numerically equal to ``e`` on the
    common domain and idempotent on its own output."""
    out: dict = {}
    for node in _topo(e):
        new_args = [out[a.uid] for a in node.args]
        if node.kind == "add":
            out[node.uid] = _simplify_sum(add(*new_args))
        else:
            out[node.uid] = _rebuild(node, new_args)
    return out[e.uid]


def _trig_square(f):
    """(argument, kind) when f is sin(u)^2 or cos(u)^2, else None."""
    if f.kind == "pow" and f.payload == 2 and f.args[0].kind in ("sin", "cos"):
        return f.args[0].args[0], f.args[0].kind
    return None


def _simplify_sum(s: Expr) -> Expr:
    if s.kind != "add":
        return s
    # cheap pre-scan: only attempt the sin^2+cos^2 rule when some argument
    # u occurs under both squares somewhere in this sum
    seen = {}
    hot = set()
    for t in s.args:
        _, core = _coeff_core(t)
        for f in (core.args if core.kind == "mul" else (core,)):
            ts = _trig_square(f)
            if ts is None:
                continue
            u, kind = ts
            prev = seen.setdefault(u.uid, kind)
            if prev != kind:
                hot.add(u.uid)
    if not hot:
        return s
    items = {}
    for t in s.args:
        c, core = _coeff_core(t)
        items[core] = items.get(core, Fraction(0)) + c
    changed = False
    for core in list(items):
        c_sin = items.get(core)
        if not c_sin:
            continue
        partner = _sin2_partner(core, hot)
        if partner is None:
            continue
        other, stripped = partner
        c_cos = items.get(other)
        if not c_cos:
            continue
        items[other] = Fraction(0)
        items[core] = c_sin - c_cos
        items[stripped] = items.get(stripped, Fraction(0)) + c_cos
        changed = True
    if not changed:
        return s
    terms = [num(c) if core is ONE else _with_coeff(c, core)
             for core, c in items.items() if c != 0]
    return add(*terms)


def _sin2_partner(core, hot):
    """For a core containing sin(u)^2 with u in the hot set, the same core
    with cos(u)^2, plus the core with that factor removed."""
    factors = core.args if core.kind == "mul" else (core,)
    for i, f in enumerate(factors):
        ts = _trig_square(f)
        if ts is not None and ts[1] == "sin" and ts[0].uid in hot:
            cos2 = pow_(cos(ts[0]), 2)
            rest = factors[:i] + factors[i + 1:]
            other = mul(cos2, *rest)
            stripped = mul(*rest) if rest else ONE
            return other, stripped
    return None


# --- distributed normal form --------------------------------------------------

class _Bail(Exception):
    pass


def _convolve(a, b, cap):
    if len(a) * len(b) > 4 * cap:
        raise _Bail
    out = {}
    for ka, ca in a.items():
        da = dict(ka)
        for kb, cb in b.items():
            d = dict(da)
            for u, e in kb:
                ne = d.get(u, Fraction(0)) + e
                if ne == 0:
                    d.pop(u, None)
                else:
                    d[u] = ne
            key = tuple(sorted(d.items()))
            c = out.get(key)
            out[key] = ca * cb if c is None else c + ca * cb
    if len(out) > cap:
        raise _Bail
    return {k: c for k, c in out.items() if c != 0}


def _term_pow(term_dict, expo, cap):
    """Power of a term dict; integer exponents distribute, a lone unit
    factor absorbs rational exponents."""
    if expo.denominator == 1 and expo >= 0:
        n = expo.numerator
        result = {(): Fraction(1)}
        base = term_dict
        while n:
            if n & 1:
                result = _convolve(result, base, cap)
            n >>= 1
            if n:
                base = _convolve(base, base, cap)
        return result
    if len(term_dict) == 1:
        (key, c), = term_dict.items()
        if expo.denominator == 1:  # negative integer
            return {tuple((u, e * expo) for u, e in key): c ** expo.numerator}
        if c == 1 and len(key) == 1 and key[0][1] == 1:
            u, _ = key[0]
            return {((u, expo),): Fraction(1)}
    raise _Bail


def _dict_to_expr(td, atoms):
    terms = []
    for key, c in td.items():
        if not key:
            terms.append(num(c))
            continue
        factors = [pow_(atoms[u], e) for u, e in key]
        terms.append(mul(*factors) if c == 1 else mul(num(c), *factors))
    return add(*terms)


def expand(e: Expr, cap: int = 4096) -> Expr:
    """Distribute products and integer powers over sums and collect like
    monomials over shared atomic bases.

    Best-effort: any node whose distributed form would exceed ``cap`` terms
    is kept as an opaque atom, so the rewrite never explodes.  Numerically
    equal to ``e`` on the common domain.
    """
    dicts = {}
    atoms = {}

    def as_atom(node):
        atoms[node.uid] = node
        return {((node.uid, Fraction(1)),): Fraction(1)}

    for node in _topo(e):
        kind = node.kind
        try:
            if kind == "num":
                td = {(): node.payload} if node.payload else {}
            elif kind == "var":
                td = as_atom(node)
            elif kind == "add":
                td = {}
                for a in node.args:
                    for k, c in dicts[a.uid].items():
                        nc = td.get(k, Fraction(0)) + c
                        if nc == 0:
                            td.pop(k, None)
                        else:
                            td[k] = nc
                if len(td) > cap:
                    raise _Bail
            elif kind == "neg":
                td = {k: -c for k, c in dicts[node.args[0].uid].items()}
            elif kind == "mul":
                td = {(): Fraction(1)}
                for a in node.args:
                    td = _convolve(td, dicts[a.uid], cap)
            elif kind in ("pow", "sqrt"):
                expo = node.payload if kind == "pow" else HALF
                inner = dicts[node.args[0].uid]
                if not inner:
                    td = {} if expo > 0 else as_atom(
                        _rebuild(node, [ZERO]))
                else:
                    try:
                        td = _term_pow(inner, expo, cap)
                    except _Bail:
                        base = _dict_to_expr(inner, atoms)
                        td = as_atom(pow_(base, expo))
            else:  # trig/exp/log of the expanded child stays atomic
                child = _dict_to_expr(dicts[node.args[0].uid], atoms)
                td = as_atom(_rebuild(node, [child]))
        except _Bail:
            td = as_atom(_rebuild(node, [
                _dict_to_expr(dicts[a.uid], atoms) for a in node.args]))
        dicts[node.uid] = td
    return _dict_to_expr(dicts[e.uid], atoms)


# --- evaluation -------------------------------------------------------------

def evaluate(e: Expr, binding, compensated: bool = False, dps: int = None):
    """Numeric value of ``e`` under ``binding`` (variable name -> value).

    Values may be floats or equally-shaped numpy arrays; arrays switch the
    whole evaluation to vectorized mode.  ``compensated`` enables Neumaier
    summation for sum nodes (scalar mode only), for expressions with large
    cancellations; ``dps`` switches the scalar evaluator to arbitrary
    precision with that many decimal digits.
    """
    vals = {}
    missing = e.free - set(binding)
    if missing:
        raise UnboundVariableError(f"unbound variables: {sorted(missing)}")
    if dps is not None:
        return _eval_mp(e, binding, dps)
    vector = any(isinstance(v, np.ndarray) for v in binding.values())
    if vector:
        with np.errstate(all="ignore"):
            for node in _topo(e):
                vals[node.uid] = _eval_vec(node, vals, binding)
        root = vals[e.uid]
        if isinstance(root, np.ndarray) and not np.all(np.isfinite(root)):
            raise DomainError("evaluation produced non-finite values")
        return root
    for node in _topo(e):
        vals[node.uid] = _eval_scalar(node, vals, binding, compensated)
    return vals[e.uid]


def _eval_mp(e, binding, dps):
    """High-precision scalar evaluation (the evaluator's precision knob)."""
    import mpmath
    with mpmath.workdps(dps):
        mpf = mpmath.mpf
        funcs = {"sqrt": mpmath.sqrt, "sin": mpmath.sin, "cos": mpmath.cos,
                 "tan": mpmath.tan, "exp": mpmath.exp, "log": mpmath.log}
        vals = {}
        for node in _topo(e):
            kind = node.kind
            if kind == "num":
                v = mpf(node.payload.numerator) / node.payload.denominator
            elif kind == "var":
                v = mpf(binding[node.payload])
            elif kind == "add":
                v = mpmath.fsum(vals[a.uid] for a in node.args)
            elif kind == "mul":
                v = mpf(1)
                for a in node.args:
                    v *= vals[a.uid]
            elif kind == "neg":
                v = -vals[node.args[0].uid]
            elif kind == "pow":
                x = vals[node.args[0].uid]
                r = node.payload
                if r.denominator == 1:
                    if x == 0 and r < 0:
                        raise DomainError("division by zero")
                    v = x ** r.numerator
                else:
                    if x < 0:
                        raise DomainError(f"negative base under power {r}")
                    v = x ** (mpf(r.numerator) / r.denominator)
            else:
                x = vals[node.args[0].uid]
                if kind == "sqrt" and x < 0:
                    raise DomainError(f"sqrt of negative value {x}")
                if kind == "log" and x <= 0:
                    raise DomainError(f"log of non-positive value {x}")
                v = funcs[kind](x)
            vals[node.uid] = v
        return float(vals[e.uid])


def _eval_scalar(node, vals, binding, compensated):
    kind = node.kind
    if kind == "num":
        return float(node.payload)
    if kind == "var":
        return float(binding[node.payload])
    if kind == "add":
        xs = [vals[a.uid] for a in node.args]
        if not compensated:
            return math.fsum(xs) if len(xs) > 8 else sum(xs)
        s = 0.0
        c = 0.0
        for x in xs:
            t = s + x
            if abs(s) >= abs(x):
                c += (s - t) + x
            else:
                c += (x - t) + s
            s = t
        return s + c
    if kind == "mul":
        p = 1.0
        for a in node.args:
            p *= vals[a.uid]
        return p
    if kind == "neg":
        return -vals[node.args[0].uid]
    x = vals[node.args[0].uid]
    if kind == "pow":
        r = node.payload
        if r.denominator == 1:
            n = r.numerator
            if x == 0.0 and n < 0:
                raise DomainError("division by zero")
            return x ** n
        if x < 0:
            raise DomainError(f"negative base {x} under rational power {r}")
        if x == 0.0 and r < 0:
            raise DomainError("division by zero")
        return x ** float(r)
    if kind == "sqrt":
        if x < 0:
            raise DomainError(f"sqrt of negative value {x}")
        return math.sqrt(x)
    if kind == "log":
        if x <= 0:
            raise DomainError(f"log of non-positive value {x}")
        return math.log(x)
    if kind == "sin":
        return math.sin(x)
    if kind == "cos":
        return math.cos(x)
    if kind == "tan":
        return math.tan(x)
    if kind == "exp":
        return math.exp(x)
    raise AssertionError(kind)


def _eval_vec(node, vals, binding):
    kind = node.kind
    if kind == "num":
        return float(node.payload)
    if kind == "var":
        v = binding[node.payload]
        return v if isinstance(v, np.ndarray) else float(v)
    if kind == "add":
        s = vals[node.args[0].uid]
        for a in node.args[1:]:
            s = s + vals[a.uid]
        return s
    if kind == "mul":
        p = vals[node.args[0].uid]
        for a in node.args[1:]:
            p = p * vals[a.uid]
        return p
    if kind == "neg":
        return -vals[node.args[0].uid]
    x = vals[node.args[0].uid]
    if kind == "pow":
        r = node.payload
        if r.denominator == 1:
            return np.power(x, r.numerator)
        return np.power(x, float(r))
    return {"sqrt": np.sqrt, "sin": np.sin, "cos": np.cos,
            "tan": np.tan, "exp": np.exp, "log": np.log}[kind](x)


def abs_magnitude(e: Expr, binding):
    """Crude cancellation scale: evaluate with all sums of absolute values."""
    vals = {}
    with np.errstate(all="ignore"):
        for node in _topo(e):
            if node.kind == "add":
                vals[node.uid] = sum(np.abs(vals[a.uid]) for a in node.args)
            elif node.kind == "neg":
                vals[node.uid] = np.abs(vals[node.args[0].uid])
            else:
                vals[node.uid] = np.abs(_eval_vec(node, vals, binding))
    return vals[e.uid]


def is_numerically_zero(e: Expr, bindings, tol: float = 1e-9) -> bool:
    """Numeric zero test at the given points, relative to the expression's
    own cancellation magnitude."""
    if e is ZERO:
        return True
    for b in bindings:
        v = evaluate(e, b)
        scale = float(np.max(abs_magnitude(e, b)))
        if abs(v) > tol * max(1.0, scale):
            return False
    return True


# --- printing ---------------------------------------------------------------

def to_ascii(e: Expr) -> str:
    """Canonical ASCII form; children appear in stored (hash) order, so the
    output is deterministic and reparses to the identical node."""
    if e._ascii is not None:
        return e._ascii
    for node in _topo(e):
        if node._ascii is None:
            node._ascii = _render(node)
    return e._ascii


def _num_str(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def _atom(node, s):
    if node.kind in ("var", "sqrt", "sin", "cos", "tan", "exp", "log"):
        return s
    if node.kind == "num" and node.payload.denominator == 1 and node.payload >= 0:
        return s
    return f"({s})"


def _render(node):
    kind = node.kind
    if kind == "num":
        return _num_str(node.payload)
    if kind == "var":
        return node.payload
    if kind == "neg":
        inner = node.args[0]
        s = inner._ascii
        return f"-({s})" if inner.kind == "add" else f"-{s}"
    if kind == "add":
        parts = []
        for i, t in enumerate(node.args):
            s = t._ascii
            if i == 0:
                parts.append(s)
            elif s.startswith("-"):
                parts.append(f" - {s[1:]}")
            else:
                parts.append(f" + {s}")
        return "".join(parts)
    if kind == "mul":
        coeff, factors = Fraction(1), []
        for a in node.args:
            if a.kind == "num":
                coeff = a.payload
            else:
                s = a._ascii
                factors.append(f"({s})" if a.kind == "add" else s)
        body = "*".join(factors)
        if coeff == 1:
            return body
        if coeff == -1:
            return f"-{body}"
        return f"{_num_str(coeff)}*{body}"
    if kind == "pow":
        base = node.args[0]
        b = _atom(base, base._ascii)
        r = node.payload
        if r.denominator == 1 and r >= 0:
            return f"{b}^{r.numerator}"
        return f"{b}^({_num_str(r)})"
    return f"{kind}({node.args[0]._ascii})"
