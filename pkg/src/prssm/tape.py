"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` is an ordered record of primitive operations built while the
forward computation runs.  Each recorded :class:`Tensor` keeps its inputs, a
vector-Jacobian closure, and a forward closure that can recompute the value
for replay checks.  Because nodes are appended in execution order, the record
is already topologically sorted and :func:`backward` visits it once in
reverse.

Tensors whose inputs are all plain constants are computed eagerly and never
recorded, so prediction-only code pays no taping overhead.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular as _scipy_solve_triangular

from .errors import NotPositiveDefinite

__all__ = [
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "grad",
    "cholesky",
    "solve_triangular",
    "finite_difference",
]


class Tape:
    """Ordered record of operations supporting one reverse sweep."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def leaf(self, value) -> "Tensor":
        """Register an input tensor whose gradient will be accumulated."""
        return Tensor(np.asarray(value, dtype=np.float64), tape=self)

    def replay(self) -> bool:
        """Recompute every node forward; True iff all outputs are bit-identical."""
        for node in self.nodes:
            if node._fwd is None:
                continue
            if not np.array_equal(node._fwd(), node.value):
                return False
        return True


class Tensor:
    """Array value plus the bookkeeping needed for the reverse sweep."""

    __slots__ = ("value", "tape", "grad", "_inputs", "_vjp", "_fwd")

    # Make ndarray <op> Tensor defer to our reflected operators instead of
    # numpy's elementwise object fallback.
    __array_ufunc__ = None

    def __init__(self, value, tape=None, inputs=(), vjp=None, fwd=None):
        self.value = value
        self.tape = tape
        self.grad = None
        self._inputs = inputs
        self._vjp = vjp
        self._fwd = fwd
        if tape is not None:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def primitive(inputs, value, vjp, fwd) -> Tensor:
    """Record one operation, or return an untracked constant if no input is taped.

    ``vjp(g)`` must return one cotangent per input (None for a constant input);
    ``fwd()`` recomputes the forward value for replay checks.
    """
    tape = None
    for x in inputs:
        if x.tape is not None:
            tape = x.tape
            break
    if tape is None:
        return Tensor(value)
    return Tensor(value, tape=tape, inputs=tuple(inputs), vjp=vjp, fwd=fwd)


def backward(output: Tensor) -> None:
    """Reverse sweep from a scalar output; fills ``.grad`` on taped tensors."""
    tape = output.tape
    if tape is None:
        raise ValueError("output is not recorded on a tape")
    if output.value.size != 1:
        raise ValueError(f"output must be scalar, got shape {output.value.shape}")
    for node in tape.nodes:
        node.grad = None
    output.grad = np.ones_like(output.value)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None or node._vjp is None:
            continue
        for inp, gi in zip(node._inputs, node._vjp(g)):
            if gi is None or inp.tape is None:
                continue
            inp.grad = gi if inp.grad is None else inp.grad + gi


def grad(output: Tensor, inputs) -> list[np.ndarray]:
    """Gradients of a scalar output w.r.t. each input; zeros when unreachable."""
    backward(output)
    out = []
    for inp in inputs:
        if inp.grad is None:
            out.append(np.zeros_like(inp.value))
        else:
            out.append(np.reshape(np.asarray(inp.grad, dtype=np.float64), inp.value.shape))
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    g = np.asarray(g)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    v = a.value + b.value
    return primitive(
        (a, b), v,
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
        lambda: a.value + b.value,
    )


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    v = a.value - b.value
    return primitive(
        (a, b), v,
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
        lambda: a.value - b.value,
    )


def negative(a):
    a = as_tensor(a)
    return primitive((a,), -a.value, lambda g: (-g,), lambda: -a.value)


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    v = a.value * b.value
    return primitive(
        (a, b), v,
        lambda g: (_unbroadcast(g * b.value, a.value.shape),
                   _unbroadcast(g * a.value, b.value.shape)),
        lambda: a.value * b.value,
    )


def divide(a, b):
    a, b = as_tensor(a), as_tensor(b)
    v = a.value / b.value
    return primitive(
        (a, b), v,
        lambda g: (_unbroadcast(g / b.value, a.value.shape),
                   _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
        lambda: a.value / b.value,
    )


def power(a, exponent: float):
    a = as_tensor(a)
    p = float(exponent)
    v = a.value ** p
    return primitive(
        (a,), v,
        lambda g: (g * p * a.value ** (p - 1.0),),
        lambda: a.value ** p,
    )


def exp(a):
    a = as_tensor(a)
    v = np.exp(a.value)
    return primitive((a,), v, lambda g: (g * v,), lambda: np.exp(a.value))


def log(a):
    a = as_tensor(a)
    v = np.log(a.value)
    return primitive((a,), v, lambda g: (g / a.value,), lambda: np.log(a.value))


def sqrt(a):
    a = as_tensor(a)
    v = np.sqrt(a.value)
    return primitive((a,), v, lambda g: (g * (0.5 / v),), lambda: np.sqrt(a.value))


def tanh(a):
    a = as_tensor(a)
    v = np.tanh(a.value)
    return primitive((a,), v, lambda g: (g * (1.0 - v * v),), lambda: np.tanh(a.value))


def maximum(a, floor: float):
    """Elementwise clamp from below at a constant; zero gradient where clamped."""
    a = as_tensor(a)
    f = float(floor)
    v = np.maximum(a.value, f)

    def vjp(g):
        return (g * (a.value > f),)

    return primitive((a,), v, vjp, lambda: np.maximum(a.value, f))


def _sum_vjp(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    v = np.asarray(a.value.sum(axis=axis, keepdims=keepdims))
    return primitive(
        (a,), v,
        lambda g: (_sum_vjp(g, a.value.shape, axis, keepdims),),
        lambda: np.asarray(a.value.sum(axis=axis, keepdims=keepdims)),
    )


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return multiply(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _matmul_vjp(av, bv, g):
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv
    g2 = np.expand_dims(g, -1) if bv.ndim == 1 else g
    g2 = np.expand_dims(g2, -2) if av.ndim == 1 else g2
    ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(av.shape)
    gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bv.shape)
    return ga, gb


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    v = np.asarray(a.value @ b.value)
    return primitive(
        (a, b), v,
        lambda g: _matmul_vjp(a.value, b.value, g),
        lambda: np.asarray(a.value @ b.value),
    )


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.value.ndim)))
    inverse = tuple(np.argsort(axes))
    return primitive(
        (a,), a.value.transpose(axes),
        lambda g: (g.transpose(inverse),),
        lambda: a.value.transpose(axes),
    )


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return primitive(
        (a,), np.swapaxes(a.value, ax1, ax2),
        lambda g: (np.swapaxes(g, ax1, ax2),),
        lambda: np.swapaxes(a.value, ax1, ax2),
    )


def reshape(a, shape):
    a = as_tensor(a)
    return primitive(
        (a,), a.value.reshape(shape),
        lambda g: (g.reshape(a.value.shape),),
        lambda: a.value.reshape(shape),
    )


def concatenate(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    v = np.concatenate([p.value for p in parts], axis=axis)
    offsets = np.cumsum([p.value.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return primitive(tuple(parts), v, vjp,
                     lambda: np.concatenate([p.value for p in parts], axis=axis))


def stack(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    v = np.stack([p.value for p in parts], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(parts)))

    return primitive(tuple(parts), v, vjp,
                     lambda: np.stack([p.value for p in parts], axis=axis))


def take(a, index):
    """Basic (slice/integer) indexing; fancy index arrays are not supported."""
    a = as_tensor(a)
    v = np.asarray(a.value[index])

    def vjp(g):
        out = np.zeros_like(a.value)
        out[index] = g
        return (out,)

    return primitive((a,), v, vjp, lambda: np.asarray(a.value[index]))


def diag_part(a):
    """Main diagonal of a square matrix."""
    a = as_tensor(a)
    v = np.diagonal(a.value).copy()

    def vjp(g):
        out = np.zeros_like(a.value)
        np.fill_diagonal(out, g)
        return (out,)

    return primitive((a,), v, vjp, lambda: np.diagonal(a.value).copy())


def cholesky_value(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with jitter escalation on failure.

    Escalates added diagonal jitter from 1e-8*mean(diag) by factors of 10 up
    to 1e-2*mean(diag); beyond that raises :class:`NotPositiveDefinite`.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if float(np.abs(a - a.T).max()) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within tolerance 1e-10")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    base = float(np.mean(np.diagonal(a)))
    if base <= 0.0:
        raise NotPositiveDefinite("matrix has non-positive mean diagonal")
    eye = np.eye(a.shape[0])
    jitter = 1e-8 * base
    while jitter <= 1e-2 * base * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(a + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"Cholesky failed after jitter escalation up to {1e-2 * base:.3e}")


def _cholesky_vjp(L, g):
    # Standard triangular backward recurrence; cotangents on the structural
    # upper-triangular zeros of L are discarded first.
    g = np.tril(g)
    P = np.tril(L.T @ g)
    idx = np.diag_indices_from(P)
    P[idx] = 0.5 * P[idx]
    W = _scipy_solve_triangular(L, P, lower=True, trans="T", check_finite=False)
    S = _scipy_solve_triangular(L, W.T, lower=True, trans="T", check_finite=False).T
    return 0.5 * (S + S.T)


def cholesky(a):
    """Differentiable lower Cholesky factor of a symmetric PD matrix."""
    a = as_tensor(a)
    v = cholesky_value(a.value)
    return primitive(
        (a,), v,
        lambda g: (_cholesky_vjp(v, g),),
        lambda: cholesky_value(a.value),
    )


def _tri_mask(g, lower):
    return np.tril(g) if lower else np.triu(g)


def solve_triangular(l_factor, b, lower=True, trans=False):
    """Differentiable triangular solve; ``trans`` solves against the transpose."""
    l_factor, b = as_tensor(l_factor), as_tensor(b)
    lv = l_factor.value
    v = _scipy_solve_triangular(lv, b.value, lower=lower,
                                trans="T" if trans else "N", check_finite=False)

    def vjp(g):
        gb = _scipy_solve_triangular(lv, g, lower=lower,
                                     trans="N" if trans else "T",
                                     check_finite=False)
        x2 = v[:, None] if v.ndim == 1 else v
        gb2 = gb[:, None] if gb.ndim == 1 else gb
        if trans:
            gl = -x2 @ gb2.T
        else:
            gl = -gb2 @ x2.T
        return _tri_mask(gl, lower), gb

    return primitive(
        (l_factor, b), v, vjp,
        lambda: _scipy_solve_triangular(lv, b.value, lower=lower,
                                        trans="T" if trans else "N",
                                        check_finite=False),
    )


def finite_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = out.reshape(-1)
    xflat = x.reshape(-1)
    for i in range(x.size):
        xp = xflat.copy()
        xm = xflat.copy()
        xp[i] += step
        xm[i] -= step
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * step)
    return out
