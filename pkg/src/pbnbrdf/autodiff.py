"""Small automatic differentiation engine.

Two pieces live here:

* :class:`Tape` / :class:`Var` -- reverse mode over parameters.  A ``Var``
  wraps a float64 scalar or numpy array; every operation is elementwise
  (plus ``matmul`` and reductions), so a batch of samples is just a batch of
  independent scalars sharing one tape.
* :class:`Dual2` -- forward-over-forward numbers carrying a value, the two
  first partials along the seeded directions (``dt``, ``dp``) and the mixed
  second partial ``dtp``.  Components may be floats, arrays or ``Var``
  objects, which is how a loss built from ``dtp`` gets parameter gradients.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DomainError", "NonFiniteError", "Tape", "Var", "Dual2", "grad",
    "value_of", "seed_theta", "seed_phi", "constant",
    "add", "sub", "mul", "div", "neg", "sin", "cos", "exp", "log1p", "softplus",
    "sigmoid", "tanh", "sqrt", "absolute", "maximum", "power", "relu", "arccos",
    "arctan2", "square", "matmul", "concat", "select",
]


class DomainError(ValueError):
    """Operand outside the mathematical domain of an operation."""

    def __init__(self, op, detail):
        self.op = op
        super().__init__(f"{op}: {detail}")


class NonFiniteError(FloatingPointError):
    """A tracked value became NaN or infinite."""

    def __init__(self, message, op=None, operands=None):
        self.op = op
        self.operands = operands
        super().__init__(message)


def _unbroadcast(g, shape):
    if np.shape(g) == tuple(shape):
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Append-only record of operations on tracked values."""

    def __init__(self):
        self.nodes = []
        self.params = []

    def __len__(self):
        return len(self.nodes)

    def param(self, value):
        """Register a parameter slot and return its leaf variable."""
        v = self._leaf(value, "param")
        self.params.append(v)
        return v

    def _leaf(self, value, op):
        value = np.array(value, dtype=np.float64) if np.ndim(value) else np.float64(value)
        return self._push(value, op, (), None)

    def _push(self, value, op, parents, backward):
        v = Var(value, self, len(self.nodes))
        self.nodes.append((op, parents, backward, value))
        return v

    def first_nonfinite(self):
        """(index, op, operand values) of the earliest non-finite node, or None."""
        for i, (op, parents, _, value) in enumerate(self.nodes):
            if not np.all(np.isfinite(value)):
                return i, op, [p.value for p in parents]
        return None


class Var:
    """A tape-tracked float64 scalar or array."""

    __slots__ = ("value", "tape", "index")
    __array_priority__ = 100

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, k): return power(self, k)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, idx): return _getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = np.size(self.value) if axis is None else np.shape(self.value)[axis]
        return _sum(self, axis, keepdims) * (1.0 / n)


def value_of(x):
    """Plain numeric value of a Var/Dual2/number."""
    if isinstance(x, Var):
        return x.value
    if isinstance(x, Dual2):
        return value_of(x.v)
    return x


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
    return tape


def _record(op, value, parents, local_grads):
    """Push a node; ``local_grads`` maps the output adjoint to parent adjoints."""
    tape = _tape_of(*parents)
    if tape is None:
        return value
    tracked = tuple(p for p in parents if isinstance(p, Var))
    mask = tuple(isinstance(p, Var) for p in parents)
    shapes = tuple(np.shape(value_of(p)) for p in parents)

    def backward(g):
        grads = local_grads(g)
        return tuple(
            _unbroadcast(gp, s) for gp, s, m in zip(grads, shapes, mask) if m
        )

    return tape._push(value, op, tracked, backward)


# -- tape primitives -------------------------------------------------------

def _binary_prim(op, fn, dfa, dfb):
    def prim(a, b):
        av, bv = value_of(a), value_of(b)
        out = fn(av, bv)
        if not (isinstance(a, Var) or isinstance(b, Var)):
            return out
        return _record(op, out, (a, b), lambda g: (dfa(g, av, bv, out), dfb(g, av, bv, out)))
    prim.__name__ = op
    return prim


def _unary_prim(op, fn, dfn, check=None):
    def prim(a):
        av = value_of(a)
        if check is not None:
            check(av)
        out = fn(av)
        if not isinstance(a, Var):
            return out
        return _record(op, out, (a,), lambda g: (g * dfn(av, out),))
    prim.__name__ = op
    return prim


def _check_div(bv):
    if np.any(bv == 0):
        raise DomainError("div", "division by zero")


def _div_fn(a, b):
    _check_div(b)
    return a / b


_add = _binary_prim("add", np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)
_sub = _binary_prim("sub", np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)
_mul = _binary_prim("mul", np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)
_div = _binary_prim("div", _div_fn, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b)


def _check_log1p(av):
    if np.any(av <= -1):
        bad = np.min(av)
        raise DomainError("log1p", f"argument {bad!r} <= -1")


def _check_sqrt(av):
    if np.any(av < 0):
        raise DomainError("sqrt", f"negative argument {np.min(av)!r}")


def _check_acos(av):
    if np.any(np.abs(av) > 1):
        raise DomainError("arccos", f"argument outside [-1, 1]: {np.max(np.abs(av))!r}")


def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus_np(x):
    return np.logaddexp(0.0, x)


def _safe_sqrt_grad(a, o):
    with np.errstate(divide="ignore"):
        return np.where(o > 0, 0.5 / np.where(o > 0, o, 1.0), 0.0)


_neg = _unary_prim("neg", np.negative, lambda a, o: -1.0)
_sin = _unary_prim("sin", np.sin, lambda a, o: np.cos(a))
_cos = _unary_prim("cos", np.cos, lambda a, o: -np.sin(a))
_exp = _unary_prim("exp", np.exp, lambda a, o: o)
_log1p = _unary_prim("log1p", np.log1p, lambda a, o: 1.0 / (1.0 + a), _check_log1p)
_softplus = _unary_prim("softplus", _softplus_np, lambda a, o: _sigmoid_np(a))
_sigmoid = _unary_prim("sigmoid", _sigmoid_np, lambda a, o: o * (1.0 - o))
_tanh = _unary_prim("tanh", np.tanh, lambda a, o: 1.0 - o * o)
_sqrt = _unary_prim("sqrt", np.sqrt, _safe_sqrt_grad, _check_sqrt)
_step = _unary_prim("step", lambda a: (np.asarray(a) > 0).astype(np.float64) if np.ndim(a) else float(a > 0),
                    lambda a, o: 0.0)
_acos = _unary_prim("arccos", np.arccos, lambda a, o: -1.0 / np.sqrt(1.0 - a * a), _check_acos)


def _pow(a, k):
    av = value_of(a)
    if float(k) != int(k) and np.any(av < 0):
        raise DomainError("pow", f"negative base with non-integer exponent {k}")
    if k < 0 and np.any(av == 0):
        raise DomainError("pow", "zero base with negative exponent")
    out = np.power(av, k)
    if not isinstance(a, Var):
        return out
    return _record("pow", out, (a,), lambda g: (g * k * np.power(av, k - 1),))


def select(mask, a, b):
    """Elementwise ``a if mask else b`` for Var or numeric operands."""
    av, bv = value_of(a), value_of(b)
    out = np.where(mask, av, bv)
    if np.ndim(out) == 0:
        out = np.float64(out)
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    return _record("select", out, (a, b), lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    return _record("matmul", out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def _sum(a, axis, keepdims):
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    shape = np.shape(av)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record("sum", out, (a,), back)


def _getitem(a, idx):
    av = a.value
    out = av[idx]

    def back(g):
        full = np.zeros_like(av)
        full[idx] = g
        return (full,)

    return _record("getitem", out, (a,), back)


def _concat_prim(xs, axis):
    vals = [np.asarray(value_of(x), dtype=np.float64) for x in xs]
    shapes = [np.shape(v) for v in vals]
    target = np.broadcast_shapes(*[s[:-1] + (1,) for s in shapes]) if axis in (-1,) else None
    if target is not None:
        vals = [np.broadcast_to(v, target[:-1] + (v.shape[-1],)) for v in vals]
    out = np.concatenate(vals, axis=axis)
    if _tape_of(*xs) is None:
        return out
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _record("concat", out, tuple(xs), lambda g: tuple(np.split(g, sizes, axis=axis)))


def concat(xs, axis=-1):
    """Concatenate arrays/Vars, or Dual2s component-wise, along ``axis``."""
    if any(isinstance(x, Dual2) for x in xs):
        ds = [x if isinstance(x, Dual2) else constant(x) for x in xs]
        return Dual2(*(_concat_prim([getattr(d, c) for d in ds], axis) for c in Dual2._fields))
    return _concat_prim(xs, axis)


# -- reverse pass ----------------------------------------------------------

def grad(loss, tape=None, params=None):
    """Gradient of a scalar ``loss`` with respect to tape parameters.

    Returns a list aligned with ``params`` (default: every registered
    parameter).  Parameters with no path to ``loss`` get exact zeros.
    """
    if isinstance(loss, Dual2):
        raise TypeError("grad() needs a scalar Var, not a Dual2; pick a component")
    if tape is None:
        tape = loss.tape if isinstance(loss, Var) else None
    if tape is None:
        raise ValueError("loss is not tracked on any tape")
    if params is None:
        params = tape.params
    lv = value_of(loss)
    if np.size(lv) != 1:
        raise ValueError(f"loss must be scalar, got shape {np.shape(lv)}")
    if not np.all(np.isfinite(lv)):
        where = tape.first_nonfinite()
        if where is None:
            raise NonFiniteError(f"loss is not finite ({lv!r})")
        i, op, operands = where
        raise NonFiniteError(f"loss is not finite ({lv!r}); first non-finite value at node {i} ({op})",
                             op=op, operands=operands)
    if not isinstance(loss, Var):
        return [np.zeros_like(p.value) for p in params]

    adj = {loss.index: np.ones_like(lv, dtype=np.float64)}
    for i in range(loss.index, -1, -1):
        g = adj.pop(i, None)
        if g is None:
            continue
        op, parents, backward, _ = tape.nodes[i]
        if backward is None:
            adj[i] = g
            continue
        for p, gp in zip(parents, backward(g)):
            if p.index in adj:
                adj[p.index] = adj[p.index] + gp
            else:
                adj[p.index] = gp
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite adjoint at node {i} ({op})", op=op)
    out = []
    for p in params:
        g = adj.get(p.index)
        out.append(np.zeros_like(p.value, dtype=np.float64) if g is None else np.asarray(g, dtype=np.float64).reshape(np.shape(p.value)))
    return out


# -- forward-over-forward numbers -----------------------------------------

class Dual2:
    """Value with d/dt, d/dp and the mixed d2/(dt dp).

    Seed an input along ``t`` with ``Dual2(x, 1, 0, 0)`` and along ``p`` with
    ``Dual2(y, 0, 1, 0)``; constants carry zeros.
    """

    __slots__ = ("v", "dt", "dp", "dtp")
    _fields = ("v", "dt", "dp", "dtp")
    __array_priority__ = 200

    def __init__(self, v, dt=0.0, dp=0.0, dtp=0.0):
        self.v, self.dt, self.dp, self.dtp = v, dt, dp, dtp

    def __iter__(self):
        return iter((self.v, self.dt, self.dp, self.dtp))

    def __repr__(self):
        return f"Dual2(v={self.v!r}, dt={self.dt!r}, dp={self.dp!r}, dtp={self.dtp!r})"

    def astuple(self):
        return tuple(np.asarray(value_of(c), dtype=np.float64) if np.ndim(value_of(c)) else float(value_of(c))
                     for c in self)

    def map(self, fn):
        """Apply a linear map (same for every component)."""
        return Dual2(fn(self.v), fn(self.dt), fn(self.dp), fn(self.dtp))

    def __getitem__(self, idx):
        return self.map(lambda c: c[idx] if np.ndim(value_of(c)) else c)

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, k): return power(self, k)
    def __matmul__(self, o): return matmul_dual(self, o)

    def _unary(self, f, df, d2f):
        v = self.v
        d1 = df(v)
        return Dual2(
            f(v),
            _mul(d1, self.dt),
            _mul(d1, self.dp),
            _add(_mul(d1, self.dtp), _mul(_mul(d2f(v), self.dt), self.dp)),
        )


def constant(x):
    return Dual2(x, 0.0, 0.0, 0.0)


def seed_theta(x):
    return Dual2(x, 1.0, 0.0, 0.0)


def seed_phi(x):
    return Dual2(x, 0.0, 1.0, 0.0)


def _as_dual(x):
    return x if isinstance(x, Dual2) else constant(x)


def add(a, b):
    if isinstance(a, Dual2) or isinstance(b, Dual2):
        a, b = _as_dual(a), _as_dual(b)
        return Dual2(*(_add(x, y) for x, y in zip(a, b)))
    return _add(a, b)


def sub(a, b):
    if isinstance(a, Dual2) or isinstance(b, Dual2):
        a, b = _as_dual(a), _as_dual(b)
        return Dual2(*(_sub(x, y) for x, y in zip(a, b)))
    return _sub(a, b)


def neg(a):
    if isinstance(a, Dual2):
        return Dual2(*(_neg(x) for x in a))
    return _neg(a)


def mul(a, b):
    if isinstance(a, Dual2) and isinstance(b, Dual2):
        return Dual2(
            _mul(a.v, b.v),
            _add(_mul(a.dt, b.v), _mul(a.v, b.dt)),
            _add(_mul(a.dp, b.v), _mul(a.v, b.dp)),
            _add(_add(_mul(a.dtp, b.v), _mul(a.dt, b.dp)),
                 _add(_mul(a.dp, b.dt), _mul(a.v, b.dtp))),
        )
    if isinstance(a, Dual2):
        return Dual2(*(_mul(x, b) for x in a))
    if isinstance(b, Dual2):
        return Dual2(*(_mul(a, x) for x in b))
    return _mul(a, b)


def div(a, b):
    if isinstance(b, Dual2):
        bv = value_of(b.v)
        if np.any(bv == 0):
            raise DomainError("div", "division by zero")
        inv = b._unary(lambda v: _div(1.0, v),
                       lambda v: _neg(_div(1.0, _mul(v, v))),
                       lambda v: _div(2.0, _mul(_mul(v, v), v)))
        return mul(a, inv)
    if isinstance(a, Dual2):
        if np.any(value_of(b) == 0):
            raise DomainError("div", "division by zero")
        return Dual2(*(_div(x, b) for x in a))
    return _div(a, b)


def _unary(a, f, df, d2f, name=None, check=None):
    if isinstance(a, Dual2):
        if check is not None:
            check(value_of(a.v))
        return a._unary(f, df, d2f)
    return f(a)


def sin(a):
    return _unary(a, _sin, _cos, lambda v: _neg(_sin(v)))


def cos(a):
    return _unary(a, _cos, lambda v: _neg(_sin(v)), lambda v: _neg(_cos(v)))


def exp(a):
    return _unary(a, _exp, _exp, _exp)


def log1p(a):
    return _unary(a, _log1p,
                  lambda v: _div(1.0, _add(1.0, v)),
                  lambda v: _neg(_div(1.0, _mul(_add(1.0, v), _add(1.0, v)))),
                  check=_check_log1p)


def sigmoid(a):
    def d1(v):
        s = _sigmoid(v)
        return _mul(s, _sub(1.0, s))

    def d2(v):
        s = _sigmoid(v)
        return _mul(_mul(s, _sub(1.0, s)), _sub(1.0, _mul(2.0, s)))

    return _unary(a, _sigmoid, d1, d2)


def softplus(a):
    def d2(v):
        s = _sigmoid(v)
        return _mul(s, _sub(1.0, s))

    return _unary(a, _softplus, _sigmoid, d2)


def tanh(a):
    def d1(v):
        t = _tanh(v)
        return _sub(1.0, _mul(t, t))

    def d2(v):
        t = _tanh(v)
        return _mul(_mul(-2.0, t), _sub(1.0, _mul(t, t)))

    return _unary(a, _tanh, d1, d2)


def sqrt(a):
    def check(v):
        _check_sqrt(v)
        if np.any(v == 0):
            raise DomainError("sqrt", "derivative undefined at 0")

    return _unary(a, _sqrt,
                  lambda v: _div(0.5, _sqrt(v)),
                  lambda v: _div(-0.25, _mul(v, _sqrt(v))),
                  check=check)


def square(a):
    return mul(a, a)


def power(a, k):
    k = float(k)
    return _unary(a, lambda v: _pow(v, k),
                  lambda v: _mul(k, _pow(v, k - 1)),
                  lambda v: _mul(k * (k - 1), _pow(v, k - 2)))


def relu(a):
    return _unary(a, lambda v: _mul(v, _step(v)), _step, lambda v: 0.0)


def arccos(a):
    def check(v):
        _check_acos(v)
        if np.any(np.abs(v) == 1):
            raise DomainError("arccos", "derivative undefined at +-1")

    def d1(v):
        return _neg(_div(1.0, _sqrt(_sub(1.0, _mul(v, v)))))

    def d2(v):
        w = _sub(1.0, _mul(v, v))
        return _neg(_div(v, _mul(w, _sqrt(w))))

    return _unary(a, _acos, d1, d2, check=check)


def absolute(a):
    def sgn(v):
        return select(value_of(v) >= 0, 1.0, -1.0)

    if isinstance(a, Dual2):
        s = sgn(a.v)
        return Dual2(*(_mul(s, c) for c in a))
    return _mul(sgn(a), a)


def maximum(a, b):
    """Branch-wise max; ties go to ``a``."""
    mask = value_of(a) >= value_of(b)
    if isinstance(a, Dual2) or isinstance(b, Dual2):
        a, b = _as_dual(a), _as_dual(b)
        return Dual2(*(select(mask, x, y) for x, y in zip(a, b)))
    return select(mask, a, b)


def arctan2(y, x):
    """Two-argument arctangent, differentiated through the ratio rule."""
    if not (isinstance(y, Dual2) or isinstance(x, Dual2)):
        yv, xv = value_of(y), value_of(x)
        return np.arctan2(yv, xv)
    y, x = _as_dual(y), _as_dual(x)
    r2 = _add(_mul(x.v, x.v), _mul(y.v, y.v))
    if np.any(value_of(r2) == 0):
        raise DomainError("arctan2", "undefined at the origin")
    v = np.arctan2(value_of(y.v), value_of(x.v))
    nt = _sub(_mul(x.v, y.dt), _mul(y.v, x.dt))
    np_ = _sub(_mul(x.v, y.dp), _mul(y.v, x.dp))
    dt = _div(nt, r2)
    dp = _div(np_, r2)
    # d/dp of nt / r2
    nt_p = _add(_sub(_mul(x.dp, y.dt), _mul(y.dp, x.dt)),
                _sub(_mul(x.v, y.dtp), _mul(y.v, x.dtp)))
    r2_p = _mul(2.0, _add(_mul(x.v, x.dp), _mul(y.v, y.dp)))
    dtp = _sub(_div(nt_p, r2), _div(_mul(nt, r2_p), _mul(r2, r2)))
    # The value is a constant w.r.t. parameters only through x, y; attach it
    # to the tape via an exact first-order link so reverse mode sees it.
    vt = _atan2_value(y.v, x.v, v)
    return Dual2(vt, dt, dp, dtp)


def _atan2_value(y, x, v):
    if not (isinstance(y, Var) or isinstance(x, Var)):
        return v
    yv, xv = value_of(y), value_of(x)
    r2 = xv * xv + yv * yv
    return _record("arctan2", v, (y, x), lambda g: (g * xv / r2, -g * yv / r2))


def matmul_dual(a, w):
    """``a @ w`` for a Dual2 ``a`` and a direction-independent matrix ``w``."""
    return Dual2(matmul(a.v, w), matmul(a.dt, w), matmul(a.dp, w), matmul(a.dtp, w))
