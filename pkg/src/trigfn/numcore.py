"""Dense/sparse kernels and a small tape-based reverse-mode differentiator.

Every differentiable primitive is a :class:`DifferentiableOp` stored in
``OPS``.  The public helpers (``matmul``, ``spmm``, ...) accept either plain
``numpy`` arrays or :class:`Var` objects.  With arrays only they simply run the
forward kernel; as soon as one argument is a ``Var`` the call is recorded on
that variable's :class:`Tape` so that :meth:`Tape.backward` can replay it in
reverse.

All arithmetic is float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

DEFAULT_SLOPE = 0.01


class DimensionError(ValueError):
    """Operand shapes do not chain."""


class GradientCheckError(RuntimeError):
    """Finite-difference check could not be carried out."""


class NumericFailure(FloatingPointError):
    """A loss or gradient became non-finite."""


def make_rng(seed, *stream) -> np.random.Generator:
    """PCG64 generator; ``stream`` ids derive independent sub-streams."""
    if stream:
        return np.random.Generator(np.random.PCG64([int(seed), *map(int, stream)]))
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    return a


# --------------------------------------------------------------------------
# tape


class Var:
    """A value living on a tape."""

    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, value, tape: "Tape", requires_grad: bool, name: str | None = None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    op: "DifferentiableOp"
    inputs: tuple
    output: Var
    attrs: dict


class Tape:
    """Linear record of the operations of one computation."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def param(self, value, name=None) -> Var:
        return Var(np.asarray(value, dtype=np.float64), self, True, name)

    def const(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64), self, False)

    def record(self, op, inputs, value, attrs) -> Var:
        needs = any(isinstance(x, Var) and x.requires_grad for x in inputs)
        out = Var(value, self, needs)
        if needs:
            self.nodes.append(_Node(op, tuple(inputs), out, attrs))
        return out

    def backward(self, out: Var, seed=None):
        """Accumulate d(out)/d(var) into ``var.grad`` for every recorded var."""
        if seed is None:
            if np.size(out.value) != 1:
                raise DimensionError("backward without a seed needs a scalar output")
            seed = np.ones_like(out.value)
        out.grad = np.asarray(seed, dtype=np.float64)
        # the tape is consumed: intermediate cotangents and nodes are dropped as we go
        # so that Var <-> Tape cycles do not pin a whole iteration's activations
        nodes, self.nodes = self.nodes, []
        while nodes:
            node = nodes.pop()
            g = node.output.grad
            if g is None:
                continue
            if node.output is not out:
                node.output.grad = None
            vals = [x.value if isinstance(x, Var) else x for x in node.inputs]
            cots = node.op.vjp(g, node.output.value, *vals, **node.attrs)
            for x, c in zip(node.inputs, cots):
                if isinstance(x, Var) and x.requires_grad and c is not None:
                    x.grad = c if x.grad is None else x.grad + c
            del node, g, vals, cots


def kink_distance(tape: Tape) -> float:
    """Smallest distance to a non-smooth point over the ops recorded on ``tape``."""
    best = np.inf
    for node in tape.nodes:
        if node.op.kink is not None:
            vals = [value_of(x) for x in node.inputs]
            best = min(best, float(node.op.kink(*vals, **node.attrs)))
    return best


def value_of(x):
    return x.value if isinstance(x, Var) else x


def detach(x):
    return np.array(value_of(x), copy=True)


# --------------------------------------------------------------------------
# op registry


@dataclass
class DifferentiableOp:
    """Forward kernel plus its vector-Jacobian product.

    ``sample(rng)`` returns ``(inputs, attrs)`` suitable for gradient checks;
    it is optional for ops that are only checked through composites.
    """

    name: str
    forward: Callable
    vjp: Callable
    sample: Callable | None = None
    kink: Callable | None = None  # inputs -> distance to nearest non-smooth point
    meta: dict = field(default_factory=dict)


OPS: dict[str, DifferentiableOp] = {}


def register(name, forward, vjp, sample=None, kink=None):
    op = DifferentiableOp(name, forward, vjp, sample, kink)
    OPS[name] = op
    return op


def apply(op: DifferentiableOp, *inputs, **attrs):
    vals = [value_of(x) for x in inputs]
    out = op.forward(*vals, **attrs)
    tape = next((x.tape for x in inputs if isinstance(x, Var)), None)
    if tape is None:
        return out
    return tape.record(op, inputs, out, attrs)


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


# elementwise arithmetic ----------------------------------------------------

def _add_f(a, b):
    _check_same(a, b, "add")
    return a + b


def _sub_f(a, b):
    _check_same(a, b, "sub")
    return a - b


def _mul_f(a, b):
    _check_same(a, b, "mul")
    return a * b


def _sample_pair(rng):
    return [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))], {}


register("add", _add_f, lambda g, y, a, b: (g, g), _sample_pair)
register("sub", _sub_f, lambda g, y, a, b: (g, -g), _sample_pair)
register("mul", _mul_f, lambda g, y, a, b: (g * b, g * a), _sample_pair)
register(
    "scale",
    lambda a, c: a * c,
    lambda g, y, a, c: (g * c,),
    lambda rng: ([rng.normal(size=(3, 4))], {"c": float(rng.uniform(-2, 2))}),
)
register(
    "add_scalar",
    lambda a, c: a + c,
    lambda g, y, a, c: (g,),
    lambda rng: ([rng.normal(size=(3, 4))], {"c": float(rng.normal())}),
)


def _add_row_f(a, b):
    if b.ndim != 2 or b.shape[0] != 1 or b.shape[1] != a.shape[1]:
        raise DimensionError(f"add_row: bias {b.shape} does not fit {a.shape}")
    return a + b


register(
    "add_row",
    _add_row_f,
    lambda g, y, a, b: (g, g.sum(axis=0, keepdims=True)),
    lambda rng: ([rng.normal(size=(4, 3)), rng.normal(size=(1, 3))], {}),
)


# linear algebra -------------------------------------------------------------

def _matmul_f(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


register(
    "matmul",
    _matmul_f,
    lambda g, y, a, b: (g @ b.T, a.T @ g),
    lambda rng: ([rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], {}),
)
register(
    "transpose",
    lambda a: a.T.copy(),
    lambda g, y, a: (g.T,),
    lambda rng: ([rng.normal(size=(3, 4))], {}),
)


def row_ranks(x):
    """Rank of every row of ``x`` among its distinct rows (lexicographic); equal rows share a rank."""
    x = np.asarray(x)
    if x.shape[0] == 0 or x.ndim < 2 or x.shape[1] == 0:
        return np.zeros(x.shape[0], dtype=np.int64)
    order = np.argsort(x[:, 0], kind="stable")
    if np.all(np.diff(x[order, 0]) > 0):
        # first column already separates every row
        ranks = np.empty(x.shape[0], dtype=np.int64)
        ranks[order] = np.arange(x.shape[0])
        return ranks
    return np.unique(x, axis=0, return_inverse=True)[1].reshape(-1)


def ordered_csr(rows, cols, data, shape, tie):
    """CSR whose entries within each row are stored by (tie, data) rather than by column.

    Products are accumulated in stored order, so a value-derived ``tie`` makes
    every row sum independent of how columns are numbered: entries can only
    tie when they contribute identical terms.
    """
    rows = np.asarray(rows, dtype=np.int64)
    order = np.lexsort((data, tie, rows))
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=shape[0]))])
    return sp.csr_matrix((np.asarray(data, dtype=np.float64)[order], np.asarray(cols)[order], indptr), shape=shape)


def _spmm_f(d, s):
    if s.shape[1] != d.shape[0]:
        raise DimensionError(f"spmm: sparse {s.shape} cannot multiply dense {d.shape}")
    s = sp.csr_matrix(s)
    rows = np.repeat(np.arange(s.shape[0]), np.diff(s.indptr))
    canon = ordered_csr(rows, s.indices, s.data, s.shape, row_ranks(d)[s.indices])
    return np.asarray(canon @ d)


def _sample_spmm(rng):
    dense = (rng.uniform(size=(5, 5)) < 0.4) * rng.normal(size=(5, 5))
    return [rng.normal(size=(5, 3))], {"s": sp.csr_matrix(dense)}


# the sparse operand is a constant attribute; only the dense side is differentiated
register("spmm", _spmm_f, lambda g, y, d, s: (np.asarray(s.T @ g),), _sample_spmm)


# nonlinearities -------------------------------------------------------------

def _leaky_f(x, slope=DEFAULT_SLOPE):
    return np.where(x >= 0, x, slope * x)


def _leaky_vjp(g, y, x, slope=DEFAULT_SLOPE):
    # subgradient at 0 is the slope
    return (np.where(x > 0, g, slope * g),)


register(
    "leaky_relu",
    _leaky_f,
    _leaky_vjp,
    lambda rng: ([rng.normal(size=(4, 3))], {"slope": DEFAULT_SLOPE}),
    kink=lambda x, slope=DEFAULT_SLOPE: np.min(np.abs(x)),
)


def _sigmoid_f(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    # keep the range open: without this, x > ~36.7 rounds to exactly 1.0
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI, out=out)


_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


register(
    "sigmoid",
    _sigmoid_f,
    lambda g, y, x: (g * y * (1.0 - y),),
    lambda rng: ([rng.normal(scale=2.0, size=(4, 3))], {}),
)
register(
    "log",
    lambda x: np.log(x),
    lambda g, y, x: (g / x,),
    lambda rng: ([rng.uniform(0.2, 3.0, size=(3, 3))], {}),
)
register(
    "power",
    lambda x, p: np.power(x, p),
    lambda g, y, x, p: (g * p * np.power(x, p - 1.0),),
    lambda rng: ([rng.uniform(0.5, 3.0, size=(3, 3))], {"p": float(rng.uniform(-2, 2))}),
)


# reductions -----------------------------------------------------------------

register(
    "sum",
    lambda x: np.array([[x.sum()]]),
    lambda g, y, x: (np.full_like(x, g.item()),),
    lambda rng: ([rng.normal(size=(3, 4))], {}),
)
register(
    "sum_squares",
    lambda x: np.array([[np.sum(x * x)]]),
    lambda g, y, x: (2.0 * g.item() * x,),
    lambda rng: ([rng.normal(size=(3, 4))], {}),
)


def _row_normalize_f(x):
    return x / x.sum(axis=1, keepdims=True)


def _row_normalize_vjp(g, y, x):
    s = x.sum(axis=1, keepdims=True)
    return ((g - np.sum(g * y, axis=1, keepdims=True)) / s,)


register(
    "row_normalize",
    _row_normalize_f,
    _row_normalize_vjp,
    lambda rng: ([rng.uniform(0.1, 2.0, size=(4, 3))], {}),
)


def _concat_f(*xs):
    return np.concatenate(xs, axis=1)


def _concat_vjp(g, y, *xs):
    out, start = [], 0
    for x in xs:
        out.append(g[:, start:start + x.shape[1]])
        start += x.shape[1]
    return tuple(out)


register(
    "concat_cols",
    _concat_f,
    _concat_vjp,
    lambda rng: ([rng.normal(size=(3, 2)), rng.normal(size=(3, 4))], {}),
)


# distances and divergences --------------------------------------------------

def _sq_dist_f(z, c):
    if z.shape[1] != c.shape[1]:
        raise DimensionError(f"sq_dist: widths {z.shape} and {c.shape} differ")
    diff = z[:, None, :] - c[None, :, :]
    return np.einsum("ikd,ikd->ik", diff, diff)


def _sq_dist_vjp(g, y, z, c):
    gz = 2.0 * (g.sum(axis=1, keepdims=True) * z - g @ c)
    gc = 2.0 * (g.sum(axis=0)[:, None] * c - g.T @ z)
    return gz, gc


register(
    "sq_dist",
    _sq_dist_f,
    _sq_dist_vjp,
    lambda rng: ([rng.normal(size=(5, 3)), rng.normal(size=(2, 3))], {}),
)


def _kl_f(p, q):
    _check_same(p, q, "kl_div")
    pos = p > 0
    return np.array([[np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos])))]])


def _kl_vjp(g, y, p, q):
    g = g.item()
    gp = np.zeros_like(p)
    pos = p > 0
    gp[pos] = g * (np.log(p[pos]) - np.log(q[pos]) + 1.0)
    return gp, -g * p / q


def _sample_kl(rng):
    p = _row_normalize_f(rng.uniform(0.1, 1.0, size=(4, 3)))
    q = _row_normalize_f(rng.uniform(0.1, 1.0, size=(4, 3)))
    return [p, q], {}


register("kl_div", _kl_f, _kl_vjp, _sample_kl)


# edge-indexed ops (message passing) -----------------------------------------

def scatter_rows(x, idx, n):
    """out[r] = sum of x[e] over e with idx[e] == r, for r < n."""
    idx = np.asarray(idx)
    inc = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n, idx.size))
    return np.asarray(inc @ x)


def _gather_f(x, idx):
    return x[idx]


def _gather_vjp(g, y, x, idx):
    return (scatter_rows(g, idx, x.shape[0]),)


register(
    "gather_rows",
    _gather_f,
    _gather_vjp,
    lambda rng: ([rng.normal(size=(4, 3))], {"idx": rng.integers(0, 4, size=7)}),
)


def _segment_sum_f(x, seg, n):
    seg = np.asarray(seg)
    inc = ordered_csr(seg, np.arange(seg.size), np.ones(seg.size), (n, seg.size), row_ranks(x))
    return np.asarray(inc @ x)


register(
    "segment_sum",
    _segment_sum_f,
    lambda g, y, x, seg, n: (g[seg],),
    lambda rng: ([rng.normal(size=(7, 3))], {"seg": rng.integers(0, 4, size=7), "n": 4}),
)
register(
    "rowdot",
    lambda a, b: np.sum(a * b, axis=1, keepdims=True),
    lambda g, y, a, b: (g * b, g * a),
    lambda rng: ([rng.normal(size=(6, 3)), rng.normal(size=(6, 3))], {}),
)
register(
    "scale_rows",
    lambda x, w: x * w,
    lambda g, y, x, w: (g * w, np.sum(g * x, axis=1, keepdims=True)),
    lambda rng: ([rng.normal(size=(6, 3)), rng.normal(size=(6, 1))], {}),
)


def _segment_softmax_f(s, seg, n):
    s = s.reshape(-1)
    mx = np.full(n, -np.inf)
    np.maximum.at(mx, seg, s)
    e = np.exp(s - mx[seg])
    inc = ordered_csr(seg, np.arange(seg.size), np.ones(seg.size), (n, seg.size), e)
    tot = inc @ e
    return (e / tot[seg]).reshape(-1, 1)


def _segment_softmax_vjp(g, y, s, seg, n):
    tot = np.bincount(seg, weights=(g * y).reshape(-1), minlength=n)
    return (y * (g - tot[seg].reshape(-1, 1)),)


register(
    "segment_softmax",
    _segment_softmax_f,
    _segment_softmax_vjp,
    lambda rng: ([rng.normal(size=(9, 1))], {"seg": rng.integers(0, 3, size=9), "n": 3}),
)


# --------------------------------------------------------------------------
# public helpers


def add(a, b):
    return apply(OPS["add"], a, b)


def sub(a, b):
    return apply(OPS["sub"], a, b)


def mul(a, b):
    return apply(OPS["mul"], a, b)


def scale(a, c):
    return apply(OPS["scale"], a, c=float(c))


def add_scalar(a, c):
    return apply(OPS["add_scalar"], a, c=float(c))


def add_row(a, bias):
    return apply(OPS["add_row"], a, bias)


def matmul(a, b):
    return apply(OPS["matmul"], a, b)


def transpose(a):
    return apply(OPS["transpose"], a)


def spmm(s, d):
    """Sparse (constant) times dense: row i is sum over stored (i, j) of s_ij * d_j.

    Terms of a row are accumulated in lexicographic order of the rows d_j
    (ties by s_ij), so relabeling nodes permutes the result bit for bit.
    """
    return apply(OPS["spmm"], d, s=s)


def leaky_relu(x, slope=DEFAULT_SLOPE):
    if slope < 0:
        raise ValueError("leaky_relu slope must be non-negative")
    return apply(OPS["leaky_relu"], x, slope=slope)


def sigmoid(x):
    return apply(OPS["sigmoid"], x)


def log(x):
    return apply(OPS["log"], x)


def power(x, p):
    return apply(OPS["power"], x, p=float(p))


def total(x):
    return apply(OPS["sum"], x)


def sum_squares(x):
    return apply(OPS["sum_squares"], x)


def row_normalize(x):
    return apply(OPS["row_normalize"], x)


def concat_cols(xs: Sequence):
    if len(xs) == 1:
        return xs[0]
    return apply(OPS["concat_cols"], *xs)


def sq_dist(z, c):
    return apply(OPS["sq_dist"], z, c)


def kl_div(p, q):
    return apply(OPS["kl_div"], p, q)


def gather_rows(x, idx):
    return apply(OPS["gather_rows"], x, idx=idx)


def segment_sum(x, seg, n):
    return apply(OPS["segment_sum"], x, seg=seg, n=int(n))


def rowdot(a, b):
    return apply(OPS["rowdot"], a, b)


def scale_rows(x, w):
    return apply(OPS["scale_rows"], x, w)


def softmax_over_index_groups(scores, groups, n_groups):
    """Softmax of per-edge scores within each group, stabilized by the group max.

    ``scores`` is an (E, 1) column; groups with no members get no output.
    """
    return apply(OPS["segment_softmax"], scores, seg=np.asarray(groups), n=int(n_groups))


def scalar(x) -> float:
    return float(np.asarray(value_of(x)).reshape(-1)[0])


# --------------------------------------------------------------------------
# finite differences


@dataclass
class FDReport:
    name: str
    max_rel_err: float
    passed: bool
    diagnostic: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<20s} max_rel_err={self.max_rel_err:.3e} {self.diagnostic}".rstrip()


def rel_error(analytic, numeric, floor=1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``x`` (mutated in place, restored)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientCheckError(f"non-finite forward value at entry {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def finite_diff_check(op: DifferentiableOp, inputs, step=1e-5, tol=1e-4, attrs=None, rng=None) -> FDReport:
    """Compare ``op.vjp`` against central differences of a random projection."""
    if step <= 0:
        raise ValueError("step must be positive")
    attrs = dict(attrs or {})
    rng = rng if rng is not None else make_rng(0)
    xs = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    for x in xs:
        if not np.all(np.isfinite(x)):
            return FDReport(op.name, float("inf"), False, "non-finite input")
    y = op.forward(*xs, **attrs)
    if not np.all(np.isfinite(y)):
        return FDReport(op.name, float("inf"), False, "non-finite forward value")
    proj = rng.normal(size=y.shape)
    cots = op.vjp(proj, y, *xs, **attrs)
    if len(cots) != len(xs):
        return FDReport(op.name, float("inf"), False, "vjp arity mismatch")
    worst = 0.0
    for k, x in enumerate(xs):
        if cots[k] is None:
            continue
        if np.shape(cots[k]) != x.shape:
            return FDReport(op.name, float("inf"), False, f"vjp shape {np.shape(cots[k])} != input {x.shape}")

        def f():
            return float(np.sum(proj * op.forward(*xs, **attrs)))

        try:
            num = numeric_gradient(f, x, step)
        except GradientCheckError as exc:
            return FDReport(op.name, float("inf"), False, str(exc))
        worst = max(worst, rel_error(cots[k], num))
    return FDReport(op.name, worst, worst <= tol)


def check_function_gradients(fn: Callable[[dict], object], params: dict, step=1e-5, tol=1e-4, name="function") -> FDReport:
    """Gradient check of a scalar-valued ``fn(params)`` built from the helpers above.

    ``fn`` is evaluated once on a tape for the analytic gradient and then on
    plain arrays for the central differences.
    """
    arrays = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    tape = Tape()
    vars_ = {k: tape.param(v, name=k) for k, v in arrays.items()}
    out = fn(vars_)
    if not np.isfinite(scalar(out)):
        return FDReport(name, float("inf"), False, "non-finite forward value")
    tape.backward(out)
    worst, worst_key = 0.0, ""
    for k, x in arrays.items():
        analytic = vars_[k].grad if vars_[k].grad is not None else np.zeros_like(x)
        try:
            num = numeric_gradient(lambda: scalar(fn(arrays)), x, step)
        except GradientCheckError as exc:
            return FDReport(name, float("inf"), False, f"{k}: {exc}")
        err = rel_error(analytic, num)
        if err > worst:
            worst, worst_key = err, k
    diag = f"(worst: {worst_key})" if worst_key else ""
    return FDReport(name, worst, worst <= tol, diag)
